#pragma once

// Nested cross-validation over virtual phantoms: every outer fold holds out one
// phantom per elasticity class for testing; each inner assignment validates on one
// of the remaining phantoms per class and trains on the rest.

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "oce/error.hpp"
#include "oce/geometry.hpp"
#include "oce/probe.hpp"
#include "oce/seed.hpp"

namespace oce::nn {

struct DatasetEntry {
  std::string path;  // recording or cached network input; may be empty for in-memory data
  int phantom_id = 0;
  int class_id = 0;
  double true_E_kpa = 0.0;
  Vec2 position_mm;
  ScanMode mode = ScanMode::cone3dt;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
};

struct InnerSplit {
  std::set<int> validation_phantoms;
  std::set<int> training_phantoms;
};

struct OuterFold {
  std::set<int> test_phantoms;
  std::vector<InnerSplit> inner;
};

struct FoldPlan {
  std::vector<OuterFold> folds;
};

inline FoldPlan make_folds(const DatasetIndex& index, std::uint64_t seed, int outer = 5, int inner = 4) {
  std::map<int, std::set<int>> by_class;
  std::map<int, int> class_of;
  for (const auto& e : index.entries) {
    auto [it, fresh] = class_of.emplace(e.phantom_id, e.class_id);
    if (!fresh && it->second != e.class_id)
      throw DataError("folds: phantom " + std::to_string(e.phantom_id) + " appears in two classes");
    by_class[e.class_id].insert(e.phantom_id);
  }
  if (by_class.empty()) throw DataError("folds: empty dataset");
  for (const auto& [cls, phantoms] : by_class)
    if (static_cast<int>(phantoms.size()) < outer)
      throw DataError("folds: class " + std::to_string(cls) + " has " + std::to_string(phantoms.size()) +
                      " phantoms, need at least " + std::to_string(outer));
  if (inner < 1) throw DataError("folds: need at least one inner assignment");

  FoldPlan plan;
  plan.folds.resize(outer);
  for (const auto& [cls, phantoms] : by_class) {
    std::vector<int> order(phantoms.begin(), phantoms.end());
    std::mt19937_64 rng(derive_seed(seed, "folds/class/" + std::to_string(cls)));
    std::shuffle(order.begin(), order.end(), rng);
    for (int f = 0; f < outer; ++f) {
      std::vector<int> rest;
      for (std::size_t j = 0; j < order.size(); ++j) {
        if (static_cast<int>(j % outer) == f) plan.folds[f].test_phantoms.insert(order[j]);
        else rest.push_back(order[j]);
      }
      if (static_cast<int>(rest.size()) < inner)
        throw DataError("folds: too few phantoms left for " + std::to_string(inner) + " distinct validation choices");
      std::mt19937_64 inner_rng(derive_seed(seed, "folds/inner/" + std::to_string(cls) + "/" + std::to_string(f)));
      std::shuffle(rest.begin(), rest.end(), inner_rng);
      plan.folds[f].inner.resize(inner);
      for (int i = 0; i < inner; ++i)
        for (std::size_t j = 0; j < rest.size(); ++j) {
          if (static_cast<int>(j) == i) plan.folds[f].inner[i].validation_phantoms.insert(rest[j]);
          else plan.folds[f].inner[i].training_phantoms.insert(rest[j]);
        }
    }
  }
  return plan;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

inline SplitIndices split_entries(const DatasetIndex& index, const OuterFold& fold, const InnerSplit& inner) {
  SplitIndices s;
  for (std::size_t i = 0; i < index.entries.size(); ++i) {
    const int p = index.entries[i].phantom_id;
    if (fold.test_phantoms.count(p)) s.test.push_back(i);
    else if (inner.validation_phantoms.count(p)) s.validation.push_back(i);
    else if (inner.training_phantoms.count(p)) s.train.push_back(i);
  }
  return s;
}

// Throws unless test, validation and training phantoms are pairwise disjoint.
inline void check_split(const DatasetIndex& index, const SplitIndices& s) {
  auto phantoms = [&](const std::vector<std::size_t>& idx) {
    std::set<int> out;
    for (auto i : idx) out.insert(index.entries[i].phantom_id);
    return out;
  };
  const auto a = phantoms(s.train), b = phantoms(s.validation), c = phantoms(s.test);
  for (int p : a)
    if (b.count(p) || c.count(p)) throw DataError("folds: phantom " + std::to_string(p) + " leaks into training");
  for (int p : b)
    if (c.count(p)) throw DataError("folds: phantom " + std::to_string(p) + " is both validation and test");
}

}  // namespace oce::nn
