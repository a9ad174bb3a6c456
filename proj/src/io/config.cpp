#include "io/config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "common/error.hpp"
#include "json.hpp"

namespace iak {

namespace {

using json = nlohmann::json;

template <typename E>
using Names = std::vector<std::pair<const char*, E>>;

const Names<Nonlinearity> kNonlinearities{{"relu", Nonlinearity::Relu}, {"erf", Nonlinearity::Erf},
                                          {"identity", Nonlinearity::Identity}};
const Names<Padding> kPaddings{{"same", Padding::Same}, {"valid", Padding::Valid}};
const Names<QkScaling> kScalings{{"inv_d", QkScaling::InvD}, {"inv_sqrt_d", QkScaling::InvSqrtD}};
const Names<Zeta> kZetas{{"softmax", Zeta::Softmax}, {"identity", Zeta::Identity}, {"relu", Zeta::Relu}};
const Names<PeKind> kPeKinds{{"none", PeKind::None}, {"random", PeKind::Random}, {"structured", PeKind::Structured}};
const Names<LayerNormNtk> kLayerNormNtk{{"own_diagonal", LayerNormNtk::OwnDiagonal},
                                        {"nngp_diagonal", LayerNormNtk::NngpDiagonal}};
const Names<ResidualNtkReading> kReadings{{"conjugated_part", ResidualNtkReading::ConjugatedPart},
                                          {"full_output", ResidualNtkReading::FullOutput}};
const Names<Precision> kPrecisions{{"f32", Precision::F32}, {"f64", Precision::F64}};
const Names<NngpSampler> kSamplers{{"conditional", NngpSampler::Conditional}, {"explicit", NngpSampler::Explicit}};
const Names<InputNtk> kInputNtk{{"zero", InputNtk::Zero}, {"input_kernel", InputNtk::InputKernel}};
const Names<DatasetKind> kDatasetKinds{{"dense", DatasetKind::Dense}, {"sequence", DatasetKind::Sequence}};
const Names<Command> kCommands{{"kernel", Command::Kernel}, {"mc_sweep", Command::McSweep},
                               {"ntk_check", Command::NtkCheck}, {"infer", Command::Infer}};

template <typename E>
std::string name_of(const Names<E>& names, E v) {
  for (const auto& [n, e] : names)
    if (e == v) return n;
  throw Error("unnamed enum value");
}

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError((path.empty() ? std::string("config") : path) + ": " + what);
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = find(key);
    if (!v) fail(at(key), "is required");
    return *v;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(at(key), "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) fail(at(key), "must be finite");
    }
  }

  template <typename U>
  void unsigned_int(const std::string& key, U& out) {
    if (const json* v = find(key)) out = as_unsigned<U>(*v, at(key));
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  template <typename E>
  void enumeration(const std::string& key, const Names<E>& names, E& out) {
    if (const json* v = find(key)) out = as_enum(*v, at(key), names);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown key");
  }

  template <typename U>
  static U as_unsigned(const json& v, const std::string& path) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
      fail(path, "expected a non-negative integer");
    return static_cast<U>(v.get<unsigned long long>());
  }

  template <typename E>
  static E as_enum(const json& v, const std::string& path, const Names<E>& names) {
    if (v.is_string())
      for (const auto& [n, e] : names)
        if (v.get<std::string>() == n) return e;
    std::string allowed;
    for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + std::string(n);
    fail(path, "expected one of: " + allowed);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Layer parse_layer(const json& j, const std::string& path);

PositionalEncoding parse_pe(const json& j, const std::string& path) {
  Reader r(j, path);
  PositionalEncoding pe;
  r.enumeration("kind", kPeKinds, pe.kind);
  r.number("alpha", pe.alpha);
  r.number("rho", pe.rho);
  r.number("phi", pe.phi);
  r.boolean("value_pe", pe.value_pe);
  r.finish();
  return pe;
}

Layer parse_layer(const json& j, const std::string& path) {
  Reader r(j, path);
  std::string type;
  r.string("type", type);
  if (type.empty()) Reader::fail(r.at("type"), "is required");
  Layer layer;
  if (type == "dense" || type == "flatten") {
    double wv = 1.0, bv = 0.0;
    r.number("weight_var", wv);
    r.number("bias_var", bv);
    layer = type == "dense" ? Layer{DenseLayer{wv, bv}} : Layer{FlattenReadoutLayer{wv, bv}};
  } else if (type == "relu" || type == "erf" || type == "identity") {
    layer = Layer{NonlinearityLayer{Reader::as_enum(json(type), r.at("type"), kNonlinearities)}};
  } else if (type == "conv") {
    ConvLayer c;
    r.unsigned_int("filter_size", c.filter_size);
    r.unsigned_int("stride", c.stride);
    r.enumeration("padding", kPaddings, c.padding);
    r.number("weight_var", c.weight_var);
    r.number("bias_var", c.bias_var);
    layer = Layer{c};
  } else if (type == "attention") {
    AttentionConfig c;
    r.enumeration("scaling", kScalings, c.scaling);
    r.enumeration("zeta", kZetas, c.zeta);
    r.number("qk_var", c.qk_var);
    r.number("ov_var", c.ov_var);
    r.boolean("tie_qk", c.tie_qk);
    r.unsigned_int("mc_samples", c.mc_samples);
    r.unsigned_int("mc_seed", c.mc_seed);
    if (const json* pe = r.find("positional_encoding")) c.pe = parse_pe(*pe, r.at("positional_encoding"));
    layer = Layer{AttentionLayer{c}};
  } else if (type == "layer_norm") {
    LayerNormLayer l;
    r.enumeration("ntk", kLayerNormNtk, l.ntk);
    layer = Layer{l};
  } else if (type == "global_average_pool") {
    layer = Layer{GlobalAveragePoolLayer{}};
  } else if (type == "residual") {
    ResidualLayer l;
    r.number("alpha", l.alpha);
    l.inner = std::make_shared<const Layer>(parse_layer(r.require("inner"), r.at("inner")));
    layer = Layer{l};
  } else if (type == "residual_attention") {
    ResidualAttentionLayer l;
    r.number("alpha", l.alpha);
    r.number("rho", l.rho);
    r.number("phi", l.phi);
    r.enumeration("ntk_reading", kReadings, l.reading);
    layer = Layer{l};
  } else {
    Reader::fail(r.at("type"), "unknown layer type '" + type +
                                   "' (dense, relu, erf, identity, conv, attention, layer_norm, "
                                   "global_average_pool, flatten, residual, residual_attention)");
  }
  r.finish();
  return layer;
}

Architecture parse_architecture_json(const json& j, const std::string& path) {
  Reader r(j, path);
  const json& layers = r.require("layers");
  if (!layers.is_array() || layers.empty()) Reader::fail(r.at("layers"), "expected a non-empty array");
  Architecture a;
  for (std::size_t i = 0; i < layers.size(); ++i)
    a.layers.push_back(parse_layer(layers[i], r.at("layers") + "[" + std::to_string(i) + "]"));
  r.finish();
  a.validate();
  return a;
}

json layer_json(const Layer& layer) {
  return std::visit(
      [&](const auto& l) -> json {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) {
          return {{"type", "dense"}, {"weight_var", l.weight_var}, {"bias_var", l.bias_var}};
        } else if constexpr (std::is_same_v<T, FlattenReadoutLayer>) {
          return {{"type", "flatten"}, {"weight_var", l.weight_var}, {"bias_var", l.bias_var}};
        } else if constexpr (std::is_same_v<T, NonlinearityLayer>) {
          return {{"type", name_of(kNonlinearities, l.kind)}};
        } else if constexpr (std::is_same_v<T, ConvLayer>) {
          return {{"type", "conv"},           {"filter_size", l.filter_size}, {"stride", l.stride},
                  {"padding", name_of(kPaddings, l.padding)}, {"weight_var", l.weight_var},
                  {"bias_var", l.bias_var}};
        } else if constexpr (std::is_same_v<T, AttentionLayer>) {
          const auto& c = l.config;
          return {{"type", "attention"},
                  {"scaling", name_of(kScalings, c.scaling)},
                  {"zeta", name_of(kZetas, c.zeta)},
                  {"qk_var", c.qk_var},
                  {"ov_var", c.ov_var},
                  {"tie_qk", c.tie_qk},
                  {"mc_samples", c.mc_samples},
                  {"mc_seed", c.mc_seed},
                  {"positional_encoding",
                   {{"kind", name_of(kPeKinds, c.pe.kind)},
                    {"alpha", c.pe.alpha},
                    {"rho", c.pe.rho},
                    {"phi", c.pe.phi},
                    {"value_pe", c.pe.value_pe}}}};
        } else if constexpr (std::is_same_v<T, LayerNormLayer>) {
          return {{"type", "layer_norm"}, {"ntk", name_of(kLayerNormNtk, l.ntk)}};
        } else if constexpr (std::is_same_v<T, GlobalAveragePoolLayer>) {
          return {{"type", "global_average_pool"}};
        } else if constexpr (std::is_same_v<T, ResidualLayer>) {
          return {{"type", "residual"}, {"alpha", l.alpha}, {"inner", layer_json(*l.inner)}};
        } else {
          return {{"type", "residual_attention"},
                  {"alpha", l.alpha},
                  {"rho", l.rho},
                  {"phi", l.phi},
                  {"ntk_reading", name_of(kReadings, l.reading)}};
        }
      },
      layer.kind);
}

json architecture_json(const Architecture& a) {
  json layers = json::array();
  for (const auto& l : a.layers) layers.push_back(layer_json(l));
  return {{"layers", layers}};
}

DimRule parse_dim(const json& v, const std::string& path) {
  if (v.is_string()) {
    if (v.get<std::string>() == "width") return {DimRule::Width, 0};
    if (v.get<std::string>() == "sqrt") return {DimRule::SqrtWidth, 0};
  } else if (v.is_number_integer() && v.get<long long>() >= 1) {
    return {DimRule::Fixed, v.get<std::size_t>()};
  }
  Reader::fail(path, "expected a positive integer, \"width\" or \"sqrt\"");
}

json dim_json(const DimRule& d) {
  switch (d.kind) {
    case DimRule::Width: return "width";
    case DimRule::SqrtWidth: return "sqrt";
    case DimRule::Fixed: return d.value;
  }
  return nullptr;
}

template <typename T>
std::vector<T> unsigned_list(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) Reader::fail(path, "expected a non-empty array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(Reader::as_unsigned<T>(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

void parse_sizes(Reader& r, FiniteSizes& s) {
  if (const json* v = r.find("widths")) {
    s.widths = unsigned_list<std::size_t>(*v, r.at("widths"));
    for (auto w : s.widths)
      if (w == 0) Reader::fail(r.at("widths"), "widths must be >= 1");
  }
  if (const json* v = r.find("logit_dim")) s.logit_dim = parse_dim(*v, r.at("logit_dim"));
  if (const json* v = r.find("heads")) s.heads = parse_dim(*v, r.at("heads"));
  if (const json* v = r.find("value_dim")) s.value_dim = parse_dim(*v, r.at("value_dim"));
  if (const json* v = r.find("output_channels")) s.output_channels = parse_dim(*v, r.at("output_channels"));
  if (const json* v = r.find("seeds")) {
    if (v->is_array()) {
      s.seeds = unsigned_list<std::uint64_t>(*v, r.at("seeds"));
    } else {
      s.seed_count = Reader::as_unsigned<std::size_t>(*v, r.at("seeds"));
      if (s.seed_count == 0) Reader::fail(r.at("seeds"), "must be >= 1");
    }
  }
  r.unsigned_int("n_inputs", s.n_inputs);
}

json sizes_json(const FiniteSizes& s) {
  json j = {{"widths", s.widths},
            {"logit_dim", dim_json(s.logit_dim)},
            {"heads", dim_json(s.heads)},
            {"value_dim", dim_json(s.value_dim)},
            {"output_channels", dim_json(s.output_channels)},
            {"n_inputs", s.n_inputs}};
  if (s.seeds.empty())
    j["seeds"] = s.seed_count;
  else
    j["seeds"] = s.seeds;
  return j;
}

SpatialGeometry parse_geometry(const json& j, const std::string& path) {
  Reader r(j, path);
  std::string kind;
  r.string("kind", kind);
  SpatialGeometry g;
  if (kind == "image") {
    std::size_t h = 0, w = 0;
    r.unsigned_int("height", h);
    r.unsigned_int("width", w);
    if (h == 0 || w == 0) Reader::fail(path, "image geometry needs height and width >= 1");
    g = SpatialGeometry::image(h, w);
  } else if (kind == "string") {
    std::size_t n = 0;
    r.unsigned_int("length", n);
    if (n == 0) Reader::fail(path, "string geometry needs length >= 1");
    g = SpatialGeometry::string(n);
  } else if (kind == "vector") {
    g = SpatialGeometry::vector();
  } else {
    Reader::fail(r.at("kind"), "expected image, string or vector");
  }
  r.finish();
  return g;
}

json geometry_json(const SpatialGeometry& g) {
  switch (g.kind) {
    case GeometryKind::Image: return {{"kind", "image"}, {"height", g.height}, {"width", g.width}};
    case GeometryKind::String: return {{"kind", "string"}, {"length", g.length}};
    case GeometryKind::Vector: return {{"kind", "vector"}};
  }
  return nullptr;
}

}  // namespace

Command parse_command(const std::string& name) { return Reader::as_enum(json(name), "command", kCommands); }

std::string command_name(Command c) { return name_of(kCommands, c); }

std::size_t DimRule::resolve(std::size_t width) const {
  switch (kind) {
    case Fixed: return value;
    case Width: return width;
    case SqrtWidth:
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(width)))));
  }
  return width;
}

FiniteWidthSpec FiniteSizes::spec(std::size_t width) const {
  FiniteWidthSpec s{width, logit_dim.resolve(width), heads.resolve(width), value_dim.resolve(width),
                    output_channels.resolve(width)};
  s.validate();
  return s;
}

std::vector<std::uint64_t> FiniteSizes::resolved_seeds(std::uint64_t run_seed) const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < seed_count; ++i) out.push_back(run_seed + i);
  return out;
}

Architecture parse_architecture(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("architecture: invalid JSON: ") + e.what());
  }
  return parse_architecture_json(j, "architecture");
}

std::string architecture_to_json(const Architecture& arch) { return architecture_json(arch).dump(2); }

ExperimentConfig parse_config(const std::string& json_text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  c.base_dir = base_dir;
  Reader r(j, "");
  if (const json* v = r.find("command")) c.command = Reader::as_enum(*v, "command", kCommands);
  c.architecture = parse_architecture_json(r.require("architecture"), "architecture");

  {
    Reader d(r.require("dataset"), "dataset");
    d.enumeration("kind", kDatasetKinds, c.dataset.kind);
    d.string("inputs", c.dataset.inputs);
    d.string("labels", c.dataset.labels);
    d.string("ids", c.dataset.ids);
    d.string("embeddings", c.dataset.embeddings);
    if (const json* g = d.find("geometry")) c.dataset.geometry = parse_geometry(*g, d.at("geometry"));
    d.unsigned_int("max_length", c.dataset.max_length);
    d.boolean("standardize", c.dataset.standardize);
    d.finish();
    if (c.dataset.kind == DatasetKind::Dense && c.dataset.inputs.empty())
      Reader::fail("dataset.inputs", "is required for dense datasets");
    if (c.dataset.kind == DatasetKind::Sequence && (c.dataset.ids.empty() || c.dataset.embeddings.empty()))
      Reader::fail("dataset", "sequence datasets need ids and embeddings");
  }
  if (const json* v = r.find("split")) {
    Reader s(*v, "split");
    s.unsigned_int("train", c.split.train);
    s.unsigned_int("validation", c.split.validation);
    s.unsigned_int("test", c.split.test);
    s.finish();
  }
  r.unsigned_int("seed", c.seed);
  r.unsigned_int("threads", c.threads);
  if (c.threads == 0) Reader::fail("threads", "must be >= 1");
  r.enumeration("precision", kPrecisions, c.precision);
  r.string("output", c.output);
  if (const json* v = r.find("kernel")) {
    Reader k(*v, "kernel");
    k.enumeration("input_ntk", kInputNtk, c.input_ntk);
    k.finish();
  }
  if (const json* v = r.find("mc_sweep")) {
    Reader m(*v, "mc_sweep");
    parse_sizes(m, c.mc_sweep.sizes);
    if (const json* counts = m.find("sample_counts")) {
      c.mc_sweep.sample_counts = unsigned_list<std::size_t>(*counts, m.at("sample_counts"));
      for (std::size_t i = 0; i < c.mc_sweep.sample_counts.size(); ++i)
        if (c.mc_sweep.sample_counts[i] == 0 || (i && c.mc_sweep.sample_counts[i] <= c.mc_sweep.sample_counts[i - 1]))
          Reader::fail(m.at("sample_counts"), "must be positive and strictly increasing");
    }
    m.enumeration("sampler", kSamplers, c.mc_sweep.sampler);
    m.finish();
  }
  if (const json* v = r.find("ntk_check")) {
    Reader n(*v, "ntk_check");
    parse_sizes(n, c.ntk_check.sizes);
    n.finish();
  }
  if (const json* v = r.find("infer")) {
    Reader i(*v, "infer");
    i.unsigned_int("classes", c.classes);
    i.finish();
  }
  r.finish();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path();
  ExperimentConfig cfg = parse_config(ss.str(), dir.empty() ? std::string(".") : dir.string());
  const std::pair<const char*, const std::string*> files[] = {{"dataset.inputs", &cfg.dataset.inputs},
                                                              {"dataset.labels", &cfg.dataset.labels},
                                                              {"dataset.ids", &cfg.dataset.ids},
                                                              {"dataset.embeddings", &cfg.dataset.embeddings}};
  for (const auto& [key, file] : files) {
    if (file->empty()) continue;
    const auto resolved = std::filesystem::path(cfg.base_dir) / *file;
    if (!std::filesystem::exists(resolved)) throw ConfigError(std::string(key) + ": no such file " + resolved.string());
  }
  return cfg;
}

std::string config_to_json(const ExperimentConfig& c) {
  json d = {{"kind", name_of(kDatasetKinds, c.dataset.kind)},
            {"inputs", c.dataset.inputs},
            {"labels", c.dataset.labels},
            {"ids", c.dataset.ids},
            {"embeddings", c.dataset.embeddings},
            {"max_length", c.dataset.max_length},
            {"standardize", c.dataset.standardize}};
  if (c.dataset.geometry) d["geometry"] = geometry_json(*c.dataset.geometry);
  json mc = sizes_json(c.mc_sweep.sizes);
  mc["sample_counts"] = c.mc_sweep.sample_counts;
  mc["sampler"] = name_of(kSamplers, c.mc_sweep.sampler);
  json j = {{"architecture", architecture_json(c.architecture)},
            {"dataset", d},
            {"split", {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test}}},
            {"seed", c.seed},
            {"threads", c.threads},
            {"precision", name_of(kPrecisions, c.precision)},
            {"output", c.output},
            {"kernel", {{"input_ntk", name_of(kInputNtk, c.input_ntk)}}},
            {"mc_sweep", mc},
            {"ntk_check", sizes_json(c.ntk_check.sizes)},
            {"infer", {{"classes", c.classes}}}};
  if (c.command) j["command"] = command_name(*c.command);
  return j.dump(2);
}

}  // namespace iak
