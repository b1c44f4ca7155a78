#pragma once

// Model checkpoints:
//
//   "OCEK" | version u16 | scalar bytes u8 | kind u8 | blocks, layers_per_block, growth,
//   init_channels, kernel u32 | budget check u8 | depth, lateral, window u32
//   | label mean f64 | label scale f64 | tensors | buffers | has_state u8 [state]
//
// Tensors are u32 count followed by (u32 size, values); state holds the next epoch,
// Adam step count and moments, the epoch history and the best snapshot.

#include <array>
#include <cstring>
#include <filesystem>
#include <memory>
#include <optional>

#include "oce/binary_io.hpp"
#include "oce/nn/train.hpp"

namespace oce::nn {

inline constexpr std::array<char, 4> kCheckpointMagic = {'O', 'C', 'E', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_arrays(io::Writer& w, const std::vector<std::vector<T>>& arrays) {
  w.put(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    w.put(static_cast<std::uint32_t>(a.size()));
    w.put_bytes(a.data(), a.size() * sizeof(T));
  }
}

template <class T>
std::vector<std::vector<T>> get_arrays(io::Reader& r) {
  const auto count = r.get<std::uint32_t>();
  if (count > r.remaining() / 4) throw ParseError("checkpoint: truncated tensor table");
  std::vector<std::vector<T>> out(count);
  for (auto& a : out) {
    const auto n = r.get<std::uint32_t>();
    if (static_cast<std::size_t>(n) * sizeof(T) > r.remaining()) throw ParseError("checkpoint: truncated tensor data");
    a.resize(n);
    r.get_bytes(a.data(), a.size() * sizeof(T));
  }
  return out;
}

}  // namespace detail

template <class S>
void save_checkpoint(Regressor<S>& model, const TrainState<S>* state, const std::filesystem::path& path) {
  io::Writer w;
  w.put_bytes(kCheckpointMagic.data(), 4);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint8_t>(sizeof(S)));
  const auto& spec = model.spec();
  w.put(static_cast<std::uint8_t>(spec.kind));
  for (int v : {spec.blocks, spec.layers_per_block, spec.growth, spec.init_channels, spec.kernel})
    w.put(static_cast<std::uint32_t>(v));
  w.put(static_cast<std::uint8_t>(spec.check_param_budget));
  for (int v : {model.depth(), model.lateral(), model.window()}) w.put(static_cast<std::uint32_t>(v));
  w.put(model.label_mean());
  w.put(model.label_scale());
  detail::put_arrays(w, snapshot_params(model.net()));
  detail::put_arrays(w, snapshot_buffers(model.net()));
  w.put(static_cast<std::uint8_t>(state != nullptr));
  if (state) {
    w.put(static_cast<std::int32_t>(state->next_epoch));
    w.put(static_cast<std::int64_t>(state->adam_steps));
    detail::put_arrays(w, state->adam_m);
    detail::put_arrays(w, state->adam_v);
    w.put(static_cast<std::uint32_t>(state->history.epochs.size()));
    for (const auto& e : state->history.epochs) {
      w.put(static_cast<std::int32_t>(e.epoch));
      w.put(e.train_mse);
      w.put(e.validation_mse);
    }
    w.put(static_cast<std::int32_t>(state->history.best_epoch));
    w.put(state->history.best_validation_mse);
    detail::put_arrays(w, state->best_params);
    detail::put_arrays(w, state->best_buffers);
  }
  io::write_file(path, w.bytes(), nullptr, 0);
}

template <class S>
struct LoadedCheckpoint {
  std::unique_ptr<Regressor<S>> model;
  std::optional<TrainState<S>> state;
};

template <class S>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0)
    throw ParseError("checkpoint: bad magic");
  io::Reader r(bytes.data(), bytes.size(), "checkpoint");
  r.get<std::uint32_t>();
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  if (r.get<std::uint8_t>() != sizeof(S)) throw ParseError("checkpoint: scalar type mismatch");
  ModelSpec spec;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 2) throw ParseError("checkpoint: unknown input kind");
  spec.kind = static_cast<InputKind>(kind);
  spec.blocks = static_cast<int>(r.get<std::uint32_t>());
  spec.layers_per_block = static_cast<int>(r.get<std::uint32_t>());
  spec.growth = static_cast<int>(r.get<std::uint32_t>());
  spec.init_channels = static_cast<int>(r.get<std::uint32_t>());
  spec.kernel = static_cast<int>(r.get<std::uint32_t>());
  spec.check_param_budget = r.get<std::uint8_t>() != 0;
  const int depth = static_cast<int>(r.get<std::uint32_t>());
  const int lateral = static_cast<int>(r.get<std::uint32_t>());
  const int window = static_cast<int>(r.get<std::uint32_t>());
  const double mean = r.get<double>();
  const double scale = r.get<double>();

  LoadedCheckpoint<S> out;
  out.model = std::make_unique<Regressor<S>>(spec, depth, lateral, window, 0);
  out.model->set_label_scaling(mean, scale);
  const auto params = detail::get_arrays<S>(r);
  const auto buffers = detail::get_arrays<double>(r);
  const auto& ps = out.model->net().params();
  if (params.size() != ps.size()) throw ParseError("checkpoint: parameter tensor count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (params[i].size() != ps[i]->size()) throw ParseError("checkpoint: parameter size mismatch in " + ps[i]->name);
  restore(out.model->net(), params, buffers);

  if (r.get<std::uint8_t>()) {
    TrainState<S> s;
    s.next_epoch = r.get<std::int32_t>();
    s.adam_steps = r.get<std::int64_t>();
    s.adam_m = detail::get_arrays<double>(r);
    s.adam_v = detail::get_arrays<double>(r);
    s.history.epochs.resize(r.get<std::uint32_t>());
    for (auto& e : s.history.epochs) {
      e.epoch = r.get<std::int32_t>();
      e.train_mse = r.get<double>();
      e.validation_mse = r.get<double>();
    }
    s.history.best_epoch = r.get<std::int32_t>();
    s.history.best_validation_mse = r.get<double>();
    s.best_params = detail::get_arrays<S>(r);
    s.best_buffers = detail::get_arrays<double>(r);
    out.state = std::move(s);
  }
  if (r.remaining() != 0) throw ParseError("checkpoint: trailing bytes");
  return out;
}

}  // namespace oce::nn
