#pragma once

// Model file layout (all integers little-endian):
//
//   bytes 0..3   magic "NCR1"
//   bytes 4..7   uint32 length L of the JSON header
//   next L bytes UTF-8 JSON header:
//                {"kind", "users", "items", "factors", "layers", "seed",
//                 "metadata": {...}, "tensors": [{"name", "rows", "cols"}, ...]}
//   remainder    for each tensor in header order, rows*cols IEEE-754 binary64
//                values, row-major, little-endian
//
// Tensor order is the for_each_tensor order of the model kind.

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ncr/baselines.hpp"
#include "ncr/models.hpp"

namespace ncr {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using AnyModel = std::variant<PopularityTable, BprParams, NbprParams, DncrParams, NeuprParams>;

inline const char* model_kind(const AnyModel& m) {
  static constexpr std::array<const char*, 5> names{"itempop", "bpr", "nbpr", "dncr", "neupr"};
  return names[m.index()];
}

inline constexpr std::array<char, 4> kModelMagic{'N', 'C', 'R', '1'};

struct ModelHeader {
  std::string kind;
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t factors = 0;
  std::size_t layers = 0;
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {

template <typename F>
void visit_model_tensors(AnyModel& model, F&& f) {
  std::visit(
      [&](auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, PopularityTable>) {
          // counts are exact in binary64 up to 2^53
          DenseMatrix c(m.counts.size(), 1);
          for (std::size_t i = 0; i < m.counts.size(); ++i) c(i, 0) = static_cast<double>(m.counts[i]);
          f("itempop.counts", c);
          for (std::size_t i = 0; i < m.counts.size(); ++i) {
            const double v = c(i, 0);
            if (!(v >= 0.0) || v != std::floor(v)) throw FormatError("itempop.counts: non-integral count");
            m.counts[i] = static_cast<std::uint64_t>(v);
          }
        } else {
          for_each_tensor(m, [&](const auto& name, DenseMatrix& t) { f(std::string(name), t); });
        }
      },
      model);
}

inline void put_u64(std::ostream& out, std::uint64_t v, int bytes) {
  for (int b = 0; b < bytes; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline std::uint64_t get_u64(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("model file truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}

inline std::size_t model_users(const AnyModel& m) {
  return std::visit(
      [](const auto& x) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, PopularityTable>) return 0;
        else return x.users();
      },
      m);
}

inline std::size_t model_items(const AnyModel& m) {
  return std::visit([](const auto& x) -> std::size_t { return x.items(); }, m);
}

/// Zero-valued model of the right shapes for a header.
inline AnyModel skeleton(const ModelHeader& h) {
  const auto m = h.users, n = h.items;
  if (h.kind == "itempop") return PopularityTable{std::vector<std::uint64_t>(n, 0)};
  if (h.kind == "bpr") {
    BprParams p{DenseMatrix(m, h.factors), DenseMatrix(n, h.factors)};
    p.learning_rate = h.metadata.value("learning_rate", 0.05);
    p.lambda = h.metadata.value("lambda", 0.01);
    return p;
  }
  if (h.kind == "nbpr") {
    if (h.factors < 2 || h.factors % 2) throw FormatError("nbpr: odd factor count in header");
    const auto k = h.factors / 2;
    return NbprParams{DenseMatrix(m, k), DenseMatrix(n, k), DenseMatrix(k, 1), DenseMatrix(k, 1)};
  }
  auto make_tower = [&]() {
    const auto widths = tower_widths(h.factors, h.layers);
    const auto d = widths[0] / 3;
    Tower t{DenseMatrix(m, d), DenseMatrix(n, d), {}, {}};
    for (std::size_t l = 1; l < widths.size(); ++l) {
      t.weights.emplace_back(widths[l], widths[l - 1]);
      t.biases.emplace_back(widths[l], 1);
    }
    return t;
  };
  if (h.kind == "dncr") {
    Tower t = make_tower();
    DenseMatrix w(t.top_width(), 1);
    return DncrParams{std::move(t), std::move(w)};
  }
  if (h.kind == "neupr") {
    if (h.factors < 2 || h.factors % 2) throw FormatError("neupr: odd factor count in header");
    const auto k = h.factors / 2;
    Tower t = make_tower();
    DenseMatrix w(2 * k + t.top_width(), 1);
    return NeuprParams{DenseMatrix(m, k), DenseMatrix(n, k), std::move(t), std::move(w)};
  }
  throw FormatError("unknown model kind '" + h.kind + "'");
}

}  // namespace detail

inline ModelHeader describe(const AnyModel& model) {
  ModelHeader h;
  h.kind = model_kind(model);
  h.users = detail::model_users(model);
  h.items = detail::model_items(model);
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, BprParams>) {
          h.factors = m.dim();
          h.metadata["learning_rate"] = m.learning_rate;
          h.metadata["lambda"] = m.lambda;
        } else if constexpr (std::is_same_v<T, NbprParams>) {
          h.factors = m.factors();
        } else if constexpr (std::is_same_v<T, DncrParams> || std::is_same_v<T, NeuprParams>) {
          h.factors = m.factors();
          h.layers = m.hidden_layers();
        }
      },
      model);
  return h;
}

/// Writes the model. `header` supplies seed and metadata; shape fields are
/// always taken from the model itself.
inline void save_model(std::ostream& out, const AnyModel& model, ModelHeader header = {}) {
  const ModelHeader shape = describe(model);
  nlohmann::json meta = header.metadata.is_object() ? header.metadata : nlohmann::json::object();
  for (auto& [k, v] : shape.metadata.items()) meta[k] = v;

  AnyModel copy = model;
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<DenseMatrix> owned;
  detail::visit_model_tensors(copy, [&](const std::string& name, DenseMatrix& t) {
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
    owned.push_back(t);
  });

  nlohmann::json j{{"kind", shape.kind},     {"users", shape.users},   {"items", shape.items},
                   {"factors", shape.factors}, {"layers", shape.layers}, {"seed", header.seed},
                   {"metadata", meta},       {"tensors", tensors}};
  const std::string text = j.dump();
  out.write(kModelMagic.data(), kModelMagic.size());
  detail::put_u64(out, text.size(), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : owned) {
    for (const double v : t.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  if (!out) throw FormatError("failed writing model");
}

struct LoadedModel {
  AnyModel model;
  ModelHeader header;
};

inline LoadedModel load_model(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kModelMagic) throw FormatError("not an NCR1 model file (bad magic)");
  const auto len = detail::get_u64(in, 4);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("model file truncated in header");

  nlohmann::json j;
  ModelHeader h;
  try {
    j = nlohmann::json::parse(text);
    h.kind = j.at("kind").get<std::string>();
    h.users = j.at("users").get<std::size_t>();
    h.items = j.at("items").get<std::size_t>();
    h.factors = j.at("factors").get<std::size_t>();
    h.layers = j.at("layers").get<std::size_t>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.metadata = j.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model header: ") + e.what());
  }

  AnyModel model = detail::skeleton(h);
  const auto& listed = j.at("tensors");
  std::size_t index = 0;
  detail::visit_model_tensors(model, [&](const std::string& name, DenseMatrix& t) {
    if (index >= listed.size()) throw FormatError("header lists too few tensors");
    const auto& entry = listed[index++];
    if (entry.at("name") != name || entry.at("rows") != t.rows() || entry.at("cols") != t.cols()) {
      throw FormatError("tensor " + std::to_string(index - 1) + " is " + entry.dump() +
                        ", expected " + name + " " + t.shape_string());
    }
    for (double& v : t.values()) v = std::bit_cast<double>(detail::get_u64(in, 8));
  });
  if (index != listed.size()) throw FormatError("header lists too many tensors");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after tensors");
  return {std::move(model), std::move(h)};
}

inline void save_model_file(const std::filesystem::path& path, const AnyModel& model,
                            const ModelHeader& header = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  save_model(out, model, header);
}

inline LoadedModel load_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return load_model(in);
}

}  // namespace ncr
