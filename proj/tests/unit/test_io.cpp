#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <array>
#include <cstring>
#include <random>

#include "common/error.hpp"
#include "io/commands.hpp"
#include "io/config.hpp"
#include "io/dataset.hpp"
#include "io/tensor_io.hpp"
#include "test_util.hpp"

using namespace iak;
using namespace iak::testing;

namespace {

template <typename T>
void put(std::string& s, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  s.append(b, sizeof(T));
}

std::string header(std::uint32_t dtype, std::vector<std::uint64_t> dims) {
  std::string s = "IAK1";
  put<std::uint32_t>(s, dtype);
  put<std::uint32_t>(s, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put<std::uint64_t>(s, d);
  return s;
}

const char* kMinimal = R"({
  "architecture": {"layers": [{"type": "dense"}, {"type": "relu"}, {"type": "global_average_pool"}]},
  "dataset": {"inputs": "x.csv", "geometry": {"kind": "vector"}}
})";

double uniform(std::mt19937_64& gen, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }

std::size_t pick(std::mt19937_64& gen, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(gen); }

Layer random_body_layer(std::mt19937_64& gen) {
  switch (pick(gen, 8)) {
    case 0: return Layer{DenseLayer{uniform(gen, 0.1, 3), uniform(gen, 0, 1)}};
    case 1: return Layer{NonlinearityLayer{Nonlinearity::Relu}};
    case 2: return Layer{NonlinearityLayer{Nonlinearity::Erf}};
    case 3: {
      AttentionConfig c;
      c.scaling = pick(gen, 2) ? QkScaling::InvD : QkScaling::InvSqrtD;
      c.zeta = std::array{Zeta::Softmax, Zeta::Identity, Zeta::Relu}[pick(gen, 3)];
      c.qk_var = uniform(gen, 0.1, 2);
      c.ov_var = uniform(gen, 0.1, 2);
      c.tie_qk = pick(gen, 2);
      c.mc_samples = 1 + pick(gen, 5000);
      c.mc_seed = gen();
      c.pe.kind = std::array{PeKind::None, PeKind::Random, PeKind::Structured}[pick(gen, 3)];
      c.pe.alpha = uniform(gen, 0, 1);
      c.pe.rho = uniform(gen, 0.1, 3);
      c.pe.phi = uniform(gen, 0.1, 3);
      c.pe.value_pe = pick(gen, 2);
      return Layer{AttentionLayer{c}};
    }
    case 4: return Layer{LayerNormLayer{pick(gen, 2) ? LayerNormNtk::OwnDiagonal : LayerNormNtk::NngpDiagonal}};
    case 5: {
      ResidualLayer r;
      r.alpha = uniform(gen, 0, 1);
      r.inner = std::make_shared<const Layer>(Layer{DenseLayer{uniform(gen, 0.1, 3), 0.0}});
      return Layer{r};
    }
    case 6: {
      ResidualAttentionLayer r;
      r.alpha = uniform(gen, 0, 1);
      r.rho = uniform(gen, 0.1, 3);
      r.phi = uniform(gen, 0.1, 3);
      r.reading = pick(gen, 2) ? ResidualNtkReading::ConjugatedPart : ResidualNtkReading::FullOutput;
      return Layer{r};
    }
    default: return Layer{NonlinearityLayer{Nonlinearity::Identity}};
  }
}

ExperimentConfig random_config(std::mt19937_64& gen) {
  ExperimentConfig c;
  c.architecture.layers.push_back(Layer{ConvLayer{1 + pick(gen, 5), 1 + pick(gen, 2),
                                                  pick(gen, 2) ? Padding::Same : Padding::Valid,
                                                  uniform(gen, 0.1, 3), uniform(gen, 0, 1)}});
  for (std::size_t i = 0, n = 1 + pick(gen, 6); i < n; ++i) c.architecture.layers.push_back(random_body_layer(gen));
  c.architecture.layers.push_back(pick(gen, 2) ? Layer{GlobalAveragePoolLayer{}}
                                               : Layer{FlattenReadoutLayer{uniform(gen, 0.1, 3), uniform(gen, 0, 1)}});
  if (pick(gen, 2)) {
    c.dataset.kind = DatasetKind::Dense;
    c.dataset.inputs = "data/x" + std::to_string(pick(gen, 100)) + ".iak";
    if (pick(gen, 2)) c.dataset.geometry = SpatialGeometry::image(1 + pick(gen, 8), 1 + pick(gen, 8));
  } else {
    c.dataset.kind = DatasetKind::Sequence;
    c.dataset.ids = "ids.txt";
    c.dataset.embeddings = "emb.csv";
    c.dataset.max_length = pick(gen, 1000);
    c.dataset.geometry = SpatialGeometry::string(1 + pick(gen, 50));
  }
  c.dataset.labels = pick(gen, 2) ? "labels.txt" : "";
  c.dataset.standardize = pick(gen, 2);
  c.command = std::array{Command::Kernel, Command::McSweep, Command::NtkCheck, Command::Infer}[pick(gen, 4)];
  if (pick(gen, 2)) c.command.reset();
  c.split = {pick(gen, 100), pick(gen, 100), pick(gen, 100)};
  c.seed = gen();
  c.threads = 1 + pick(gen, 16);
  c.precision = pick(gen, 2) ? Precision::F32 : Precision::F64;
  c.output = "out" + std::to_string(pick(gen, 10));
  c.input_ntk = pick(gen, 2) ? InputNtk::Zero : InputNtk::InputKernel;
  auto rule = [&] {
    switch (pick(gen, 3)) {
      case 0: return DimRule{DimRule::Width, 0};
      case 1: return DimRule{DimRule::SqrtWidth, 0};
      default: return DimRule{DimRule::Fixed, 1 + pick(gen, 64)};
    }
  };
  for (FiniteSizes* s : {&c.mc_sweep.sizes, &c.ntk_check.sizes}) {
    s->widths = {1 + pick(gen, 64), 65 + pick(gen, 512)};
    s->logit_dim = rule();
    s->heads = rule();
    s->value_dim = rule();
    s->output_channels = rule();
    if (pick(gen, 2)) s->seeds = {gen(), gen()};
    s->seed_count = 1 + pick(gen, 9);
    s->n_inputs = pick(gen, 30);
  }
  c.mc_sweep.sample_counts = {1 + pick(gen, 10), 20 + pick(gen, 100)};
  c.mc_sweep.sampler = pick(gen, 2) ? NngpSampler::Conditional : NngpSampler::Explicit;
  c.classes = static_cast<int>(pick(gen, 20));
  return c;
}

}  // namespace

TEST_CASE("IAK1 one-example file round-trips bit-exactly") {
  TempDir dir("tensor");
  Tensor t;
  t.dtype = DType::F64;
  t.dims = {1, 2, 3};
  t.values = {0.1, -2.5, 1e-300, 3.0, -0.0, 7.25};
  write_tensor(dir.file("a.iak"), t);

  const std::string bytes = read_file(dir.file("a.iak"));
  std::string expected = header(2, {1, 2, 3});
  for (double v : t.values) put<double>(expected, v);
  CHECK(bytes == expected);

  const Tensor back = read_tensor(dir.file("a.iak"));
  CHECK(back.dtype == DType::F64);
  CHECK(back.dims == t.dims);
  for (std::size_t i = 0; i < t.values.size(); ++i)
    CHECK(std::memcmp(&back.values[i], &t.values[i], sizeof(double)) == 0);

  Tensor f = t;
  f.dtype = DType::F32;
  f.values = {0.5, -1.25, 3.0, 0.0, 8.0, -16.0};
  write_tensor(dir.file("f.iak"), f);
  CHECK(read_file(dir.file("f.iak")).size() == header(1, {1, 2, 3}).size() + 6 * 4);
  CHECK(read_tensor(dir.file("f.iak")).values == f.values);

  Tensor i;
  i.dtype = DType::I64;
  i.dims = {3};
  i.values = {0, 9, -4};
  write_tensor(dir.file("i.iak"), i);
  CHECK(read_tensor(dir.file("i.iak")).values == i.values);
}

TEST_CASE("IAK1 malformed headers are rejected") {
  TempDir dir("bad");
  std::string good = header(2, {2});
  put<double>(good, 1.0);
  put<double>(good, 2.0);

  auto bad = [&](std::string bytes) {
    write_file(dir.file("b.iak"), bytes);
    CHECK_THROWS_AS(read_tensor(dir.file("b.iak")), IoError);
  };
  std::string s = good;
  s[0] = 'X';
  bad(s);
  s = good;
  s[4] = 9;  // dtype code
  bad(s);
  bad(good.substr(0, good.size() - 1));
  bad(good + "x");
  bad(good.substr(0, 6));
  bad(header(2, std::vector<std::uint64_t>(9, 1)));
  CHECK_THROWS_AS(read_tensor(dir.file("missing.iak")), IoError);
}

TEST_CASE("CSV inputs: header detection, geometry and shape checks") {
  TempDir dir("csv");
  write_file(dir.file("h.csv"), "a,b,c,d\n1,2,3,4\n5,6,7,8\n");
  write_file(dir.file("n.csv"), "1,2,3,4\n5,6,7,8\n");
  const Matrix h = read_numeric_csv(dir.file("h.csv"));
  const Matrix n = read_numeric_csv(dir.file("n.csv"));
  CHECK(h.rows() == 2);
  CHECK(h == n);

  DatasetSpec spec;
  spec.inputs = "h.csv";
  CHECK_THROWS_AS(load_dataset(spec, dir.str()), ConfigError);
  spec.geometry = SpatialGeometry::string(2);
  const DatasetBundle b = load_dataset(spec, dir.str());
  REQUIRE(b.inputs.size() == 2);
  CHECK(b.inputs[1].values.rows() == 2);
  CHECK(b.inputs[1].values.cols() == 2);
  CHECK(b.inputs[1].values(1, 0) == 7.0);

  spec.geometry = SpatialGeometry::string(3);
  CHECK_THROWS_AS(load_dataset(spec, dir.str()), IoError);

  write_file(dir.file("ragged.csv"), "1,2\n3\n");
  CHECK_THROWS_AS(read_numeric_csv(dir.file("ragged.csv")), IoError);
}

TEST_CASE("dense IAK1 inputs take geometry from the rank") {
  TempDir dir("dense");
  Tensor t;
  t.dims = {2, 2, 3, 1};
  for (int i = 0; i < 12; ++i) t.values.push_back(i);
  write_tensor(dir.file("img.iak"), t);
  DatasetSpec spec;
  spec.inputs = "img.iak";
  const DatasetBundle b = load_dataset(spec, dir.str());
  REQUIRE(b.inputs.size() == 2);
  CHECK(b.inputs[0].geometry == SpatialGeometry::image(2, 3));
  CHECK(b.inputs[1].values(4, 0) == 10.0);

  spec.geometry = SpatialGeometry::image(3, 2);
  CHECK_THROWS_AS(load_dataset(spec, dir.str()), ConfigError);
}

TEST_CASE("sequence datasets: lengths, truncation, embedding lookup, labels") {
  TempDir dir("seq");
  write_file(dir.file("ids.txt"), "0 3 1 2 2\n4 1 0\n1 1 1 1 1 1 3\n");
  std::mt19937_64 gen(5);
  const Matrix emb = random_matrix(5, 3, gen);
  std::string csv;
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    char line[256];
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", emb(i, 0), emb(i, 1), emb(i, 2));
    csv += line;
  }
  write_file(dir.file("emb.csv"), csv);
  write_file(dir.file("labels.txt"), "1\n0\n2\n");

  DatasetSpec spec;
  spec.kind = DatasetKind::Sequence;
  spec.ids = "ids.txt";
  spec.embeddings = "emb.csv";
  spec.labels = "labels.txt";
  spec.max_length = 4;
  const DatasetBundle b = load_dataset(spec, dir.str());
  CHECK(b.raw_lengths == std::vector<std::size_t>{5, 3, 7});
  REQUIRE(b.inputs.size() == 3);
  CHECK(b.inputs[0].values.rows() == 4);
  CHECK(b.inputs[1].values.rows() == 3);
  CHECK(b.inputs[2].values.rows() == 4);
  CHECK(b.inputs[1].geometry == SpatialGeometry::string(3));
  CHECK(b.labels == std::vector<int>{1, 0, 2});
  CHECK(b.classes == 3);

  const std::vector<std::vector<int>> ids{{0, 3, 1, 2}, {4, 1, 0}, {1, 1, 1, 1}};
  for (std::size_t n = 0; n < ids.size(); ++n)
    for (std::size_t t = 0; t < ids[n].size(); ++t)
      CHECK((b.inputs[n].values.row(static_cast<Eigen::Index>(t)) - emb.row(ids[n][t])).norm() <= 1e-15);

  spec.max_length = 0;
  CHECK(load_dataset(spec, dir.str()).inputs[2].values.rows() == 7);

  write_file(dir.file("ids.txt"), "0 1\n5\n0\n");
  CHECK_THROWS_AS(load_dataset(spec, dir.str()), IoError);
  write_file(dir.file("ids.txt"), "0 1\n0\n");
  CHECK_THROWS_AS(load_dataset(spec, dir.str()), ConfigError);  // 2 inputs, 3 labels
}

TEST_CASE("config: minimal document and strictness") {
  const ExperimentConfig c = parse_config(kMinimal);
  CHECK(c.architecture.layers.size() == 3);
  CHECK(c.dataset.inputs == "x.csv");
  CHECK(c.precision == Precision::F64);
  CHECK(!c.command);

  auto fails_with = [](const std::string& doc, const std::string& fragment) {
    try {
      parse_config(doc);
      FAIL("accepted: " << doc);
    } catch (const ConfigError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
  };
  const std::string arch = R"("architecture": {"layers": [{"type": "dense"}, {"type": "global_average_pool"}]})";
  fails_with("{" + arch + "}", "dataset");
  fails_with("{" + arch + R"(, "dataset": {"geometry": {"kind": "vector"}}})", "dataset.inputs");
  fails_with("{" + arch + R"(, "dataset": {"inputs": "x"}, "sede": 1})", "sede");
  fails_with(R"({"architecture": {"layers": [{"type": "dense", "wieght_var": 1}]}, "dataset": {"inputs": "x"}})",
             "architecture.layers[0].wieght_var");
  fails_with(R"({"architecture": {"layers": [{"type": "attention", "scaling": "inv_cube"}]}, "dataset": {"inputs": "x"}})",
             "architecture.layers[0].scaling");
  fails_with(R"({"architecture": {"layers": [{"type": "residual", "inner": {"type": "dense", "x": 1}}]}, "dataset": {"inputs": "x"}})",
             "architecture.layers[0].inner.x");
  fails_with("{" + arch + R"(, "dataset": {"inputs": "x"}, "threads": -2})", "threads");
  fails_with("{" + arch + R"(, "dataset": {"inputs": "x"}, "precision": "f16"})", "precision");
  fails_with("{" + arch + R"(, "dataset": {"inputs": "x"}, "mc_sweep": {"heads": "cube"}})", "mc_sweep.heads");
  fails_with("{" + arch + R"(, "dataset": {"inputs": "x"}, "mc_sweep": {"sample_counts": [10, 5]}})",
             "mc_sweep.sample_counts");
  fails_with("{" + arch + R"(, "dataset": {"inputs": "x"}, "seed": 1.5})", "seed");
  fails_with("{" + arch + R"(, "dataset": {"inputs": "x"})", "invalid JSON");
  fails_with(R"({"architecture": {"layers": []}, "dataset": {"inputs": "x"}})", "architecture.layers");
}

TEST_CASE("config: load_config resolves and checks dataset paths") {
  TempDir dir("cfg");
  write_file(dir.file("c.json"), kMinimal);
  CHECK_THROWS_AS(load_config(dir.file("c.json")), ConfigError);
  write_file(dir.file("x.csv"), "1,2\n");
  const ExperimentConfig c = load_config(dir.file("c.json"));
  CHECK(c.base_dir == dir.str());
  CHECK_THROWS_AS(load_config(dir.file("nope.json")), ConfigError);
}

TEST_CASE("config: serialize then parse is the identity") {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 200; ++trial) {
    const ExperimentConfig c = random_config(gen);
    const std::string text = config_to_json(c);
    const ExperimentConfig back = parse_config(text);
    REQUIRE(config_to_json(back) == text);
    CHECK(back.seed == c.seed);
    CHECK(back.architecture.layers.size() == c.architecture.layers.size());
  }
  const Architecture a = parse_config(kMinimal).architecture;
  CHECK(architecture_to_json(parse_architecture(architecture_to_json(a))) == architecture_to_json(a));
}

TEST_CASE("DimRule and seed resolution") {
  CHECK(DimRule{DimRule::SqrtWidth, 0}.resolve(1024) == 32);
  CHECK(DimRule{DimRule::SqrtWidth, 0}.resolve(80) == 8);
  CHECK(DimRule{DimRule::Width, 0}.resolve(7) == 7);
  CHECK(DimRule{DimRule::Fixed, 3}.resolve(7) == 3);
  FiniteSizes s;
  CHECK(s.resolved_seeds(10) == std::vector<std::uint64_t>{10, 11, 12, 13, 14});
  s.seeds = {4, 2};
  CHECK(s.resolved_seeds(10) == std::vector<std::uint64_t>{4, 2});
}

namespace {

// Two Gaussian blobs in 4 dimensions, far apart along the first axis.
void write_blobs(const TempDir& dir, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::string x, y;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    char line[256];
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g\n", (label ? 2.0 : -2.0) + noise(gen), noise(gen),
                  1.0 + noise(gen), noise(gen));
    x += line;
    y += std::to_string(label) + "\n";
  }
  write_file(dir.file("x.csv"), x);
  write_file(dir.file("y.txt"), y);
}

ExperimentConfig small_config(const TempDir& dir, const std::string& arch_json) {
  ExperimentConfig c = parse_config(R"({"architecture": )" + arch_json + R"(,
    "dataset": {"inputs": "x.csv", "labels": "y.txt", "geometry": {"kind": "string", "length": 2}}})",
                                    dir.str());
  c.output = dir.file("out");
  return c;
}

}  // namespace

TEST_CASE("commands: kernel files, determinism and thread independence") {
  TempDir dir("cmd");
  write_blobs(dir, 6, 1);
  ExperimentConfig c = small_config(
      dir, R"({"layers": [{"type": "dense"}, {"type": "attention", "scaling": "inv_sqrt_d", "zeta": "softmax",
                            "mc_samples": 64}, {"type": "relu"}, {"type": "flatten"}]})");
  const auto files = run_kernel(c);
  REQUIRE(files.size() == 3);
  const Tensor nngp = read_tensor(files[0]);
  CHECK(nngp.dims == std::vector<std::uint64_t>{6, 6});
  CHECK(nngp.dtype == DType::F64);
  std::vector<std::string> first;
  for (const auto& f : files) first.push_back(read_file(f));

  c.threads = 3;
  run_kernel(c);
  for (std::size_t i = 0; i < files.size(); ++i) CHECK(read_file(files[i]) == first[i]);

  c.precision = Precision::F32;
  CHECK(read_tensor(run_kernel(c)[1]).dtype == DType::F32);
}

TEST_CASE("commands: sweep and check row counts") {
  TempDir dir("sweep");
  write_blobs(dir, 4, 2);
  ExperimentConfig c = small_config(
      dir, R"({"layers": [{"type": "dense"}, {"type": "relu"}, {"type": "attention", "scaling": "inv_sqrt_d",
                            "zeta": "identity", "qk_var": 0.5, "ov_var": 0.5}, {"type": "flatten"}]})");
  c.mc_sweep.sizes.widths = {4, 9};
  c.mc_sweep.sizes.seed_count = 3;
  c.mc_sweep.sample_counts = {2, 5, 8};
  const std::string sweep = read_file(run_mc_sweep(c)[0]);
  CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 1 + 2 * 3 * 3);
  CHECK(sweep.rfind("width,n_samples,seed,log_distance\n", 0) == 0);
  c.threads = 2;
  CHECK(read_file(run_mc_sweep(c)[0]) == sweep);

  c.ntk_check.sizes.widths = {4, 16};
  c.ntk_check.sizes.seeds = {7, 8};
  const std::string check = read_file(run_ntk_check(c)[0]);
  CHECK(std::count(check.begin(), check.end(), '\n') == 1 + 2 * 2);
  CHECK(check.rfind("width,seed,rel_error\n4,7,", 0) == 0);
  CHECK(check.find("\n16,8,") != std::string::npos);
}

TEST_CASE("commands: infer separates a linearly separable toy set") {
  TempDir dir("infer");
  write_blobs(dir, 16, 3);
  ExperimentConfig c = parse_config(R"({"architecture": {"layers": [{"type": "flatten", "bias_var": 0.1}]},
    "dataset": {"inputs": "x.csv", "labels": "y.txt", "geometry": {"kind": "vector"}},
    "split": {"train": 8, "validation": 4, "test": 4}})",
                                    dir.str());
  c.output = dir.file("out");
  const std::string text = read_file(run_infer(c)[0]);
  CHECK(text.find("\"test_acc\": 1.0") != std::string::npos);
  CHECK(text.find("\"nngp\"") != std::string::npos);
  CHECK(text.find("\"ntk\"") != std::string::npos);

  c.split.test = 5;
  try {
    run_infer(c);
    FAIL("oversized split accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("infer: ", 0) == 0);
  }
}
