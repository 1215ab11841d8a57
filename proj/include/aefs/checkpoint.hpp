#pragma once

// Plain-text model checkpoints. Values are hex floats, so a save/load
// round trip is bit-exact.
//
//   aefs-checkpoint 1
//   tensor <name> <rows> <cols>
//   <rows*cols hex floats separated by spaces>

#include <charconv>
#include <limits>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "aefs/errors.hpp"
#include "aefs/models.hpp"
#include "aefs/tensor.hpp"

namespace aefs {

inline constexpr const char* kCheckpointMagic = "aefs-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& out, const std::vector<NamedTensor>& state) {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  char buf[64];
  for (const auto& [name, t] : state) {
    if (name.find_first_of(" \t\n") != std::string::npos) throw DataError("checkpoint: tensor name has whitespace");
    out << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, t[i], std::chars_format::hex);
      if (i) out << ' ';
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw DataError("checkpoint: write failed");
}

inline std::vector<NamedTensor> load_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) throw ParseError("checkpoint: bad header");
  if (version != kCheckpointVersion) throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  std::vector<NamedTensor> state;
  std::string word;
  while (in >> word) {
    if (word != "tensor") throw ParseError("checkpoint: expected 'tensor', got '" + word + "'");
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    if (!(in >> name >> rows >> cols)) throw ParseError("checkpoint: bad tensor header");
    Tensor2 t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::string v;
      if (!(in >> v)) throw ParseError("checkpoint: '" + name + "' is truncated");
      std::string_view sv = v;
      const bool neg = !sv.empty() && sv.front() == '-';
      if (neg) sv.remove_prefix(1);
      double x = 0.0;
      const auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), x, std::chars_format::hex);
      if (ec != std::errc{} || ptr != sv.data() + sv.size()) {
        if (sv == "inf") x = std::numeric_limits<double>::infinity();
        else if (sv == "nan") x = std::numeric_limits<double>::quiet_NaN();
        else throw ParseError("checkpoint: bad value '" + v + "' in '" + name + "'");
      }
      t[i] = neg ? -x : x;
    }
    state.emplace_back(std::move(name), std::move(t));
  }
  return state;
}

inline void save_checkpoint(std::ostream& out, Model& model) { save_checkpoint(out, model.state()); }
inline void load_checkpoint(std::istream& in, Model& model) { model.load_state(load_checkpoint(in)); }

}  // namespace aefs
