// dcag: profiling, parameter sweeps and single guided forward passes over a
// seeded toy dual-stream attention stack. Every artifact is a deterministic
// function of the flags.
//
// Exit codes: 0 success, 1 runtime failure or failed --check, 2 usage error,
// 3 configuration error.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dcag/dcag.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::size_t layers = 8;
  std::size_t steps = 6;
  std::uint64_t seed = 42;
  std::size_t heads = 4;
  std::size_t dim = 64;
  std::size_t txt_tokens = 8;
  std::size_t img_tokens = 144;
  std::string out = ".";

  dcag::ToyShape shape() const { return {layers, steps, txt_tokens, img_tokens, dim, heads}; }
};

struct ValueRange {
  double start = 1.0;
  double stop = 1.2;
  std::size_t count = 5;
  std::string text = "1.0:1.2:5";
};

ValueRange parse_range(const std::string& text, const char* flag) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.size() != 3) throw UsageError(std::string(flag) + " expects start:stop:count, got '" + text + "'");
  try {
    ValueRange r;
    r.start = dcag::detail::parse_double(parts[0], flag);
    r.stop = dcag::detail::parse_double(parts[1], flag);
    r.count = dcag::detail::parse_index(parts[2], flag);
    r.text = text;
    if (r.count == 0) throw UsageError(std::string(flag) + " count must be at least 1");
    if (r.start <= 0.0 || r.stop <= 0.0) throw UsageError(std::string(flag) + " values must be positive");
    return r;
  } catch (const dcag::ConfigError& e) {
    throw UsageError(std::string(flag) + ": " + e.what());
  }
}

void validate_common(const CommonOptions& o, bool uses_layers) {
  if (uses_layers && o.layers == 0) throw UsageError("--layers must be at least 1");
  if (uses_layers && o.steps == 0) throw UsageError("--steps must be at least 1");
  if (o.txt_tokens == 0) throw UsageError("--txt-tokens must be at least 1");
  if (o.img_tokens == 0) throw UsageError("--img-tokens must be at least 1");
  if (o.heads == 0 || o.dim == 0 || o.dim % o.heads != 0) throw UsageError("--dim must be a positive multiple of --heads");
  if ((o.dim / o.heads) % 2 != 0) throw UsageError("--dim / --heads must be even for rotary embeddings");
}

/// Plain-text `key = value` record written next to every artifact set.
class Manifest {
 public:
  Manifest(std::string command, const CommonOptions& o) : command_(std::move(command)) {
    add("tool", "dcag");
    add("version", dcag::kVersion);
    add("command", command_);
    add("seed", std::to_string(o.seed));
    add("layers", std::to_string(o.layers));
    add("steps", std::to_string(o.steps));
    add("heads", std::to_string(o.heads));
    add("dim", std::to_string(o.dim));
    add("txt_tokens", std::to_string(o.txt_tokens));
    add("img_tokens", std::to_string(o.img_tokens));
  }

  void add(const std::string& key, const std::string& value) { lines_.emplace_back(key, value); }
  void add(const std::string& key, double value) { add(key, dcag::format_number(value)); }
  void artifact(const fs::path& p) { add("artifact", p.filename().string()); }

  void write(const fs::path& dir) const {
    std::ofstream os(dir / (command_ + ".manifest"));
    for (const auto& [k, v] : lines_) os << k << " = " << v << '\n';
  }

 private:
  std::string command_;
  std::vector<std::pair<std::string, std::string>> lines_;
};

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + out + "': " + ec.message());
  return dir;
}

std::ofstream open_artifact(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  return os;
}

int cmd_profile(const CommonOptions& o, bool heatmap) {
  validate_common(o, true);
  const fs::path dir = prepare_out_dir(o.out);
  const auto shape = o.shape();
  const dcag::ToyStack stack = dcag::ToyStack::create(shape, o.seed);
  const dcag::ProfilePair profile = dcag::profile_stack(stack, dcag::make_toy_input(shape, o.seed), o.steps);

  Manifest manifest("profile", o);
  {
    auto os = open_artifact(dir / "ratios.csv");
    dcag::write_ratio_csv(os, profile);
    manifest.artifact(dir / "ratios.csv");
  }
  if (heatmap) {
    for (const auto& [name, p] : {std::pair{"heatmap_k.pgm", &profile.key}, std::pair{"heatmap_v.pgm", &profile.value}}) {
      auto os = open_artifact(dir / name);
      dcag::write_heatmap_pgm(os, *p);
      manifest.artifact(dir / name);
    }
  }

  const double mean_k = profile.key.mean(), mean_v = profile.value.mean();
  std::string r = "undefined";
  try {
    r = dcag::format_number(dcag::pearson(profile.key.ratios, profile.value.ratios));
  } catch (const dcag::DegenerateInputError&) {
  }
  manifest.add("mean_ratio_k", mean_k);
  manifest.add("mean_ratio_v", mean_v);
  manifest.add("pearson_kv", r);
  manifest.write(dir);

  std::cout << "mean_ratio_k = " << dcag::format_number(mean_k) << '\n'
            << "mean_ratio_v = " << dcag::format_number(mean_v) << '\n'
            << "pearson_kv = " << r << '\n';
  return 0;
}

int cmd_sweep(const CommonOptions& o, const std::string& dk_text, const std::string& dv_text,
              const std::string& contour_text) {
  validate_common(o, true);
  const ValueRange dk = parse_range(dk_text, "--dk");
  const ValueRange dv = parse_range(dv_text, "--dv");
  std::optional<std::pair<dcag::Metric, double>> contour;
  if (!contour_text.empty()) {
    const auto eq = contour_text.find('=');
    if (eq == std::string::npos) throw UsageError("--contour expects metric=level, got '" + contour_text + "'");
    try {
      contour.emplace(dcag::parse_metric(contour_text.substr(0, eq)),
                      dcag::detail::parse_double(contour_text.substr(eq + 1), "--contour"));
    } catch (const dcag::ConfigError& e) {
      throw UsageError(std::string("--contour: ") + e.what());
    }
  }
  const std::size_t side = [&] {
    try {
      return dcag::image_side(o.img_tokens);
    } catch (const dcag::ConfigError&) {
      throw UsageError("--img-tokens must be a perfect square for sweeps");
    }
  }();
  if (side < dcag::kSsimWindow) {
    throw UsageError("--img-tokens must be at least " + std::to_string(dcag::kSsimWindow * dcag::kSsimWindow) +
                     " so the rendered image fits the SSIM window");
  }

  const fs::path dir = prepare_out_dir(o.out);
  const auto shape = o.shape();
  const dcag::ToyStack stack = dcag::ToyStack::create(shape, o.seed);
  const dcag::SweepResult result = dcag::sweep(stack, dcag::make_toy_input(shape, o.seed),
                                               dcag::linspace(dk.start, dk.stop, dk.count),
                                               dcag::linspace(dv.start, dv.stop, dv.count));

  Manifest manifest("sweep", o);
  manifest.add("dk", dk.text);
  manifest.add("dv", dv.text);
  {
    auto os = open_artifact(dir / "sweep.csv");
    dcag::write_sweep_csv(os, result);
    manifest.artifact(dir / "sweep.csv");
  }
  std::cout << "rows = " << result.grid.size() << '\n';
  manifest.add("rows", std::to_string(result.grid.size()));
  if (contour) {
    const auto lines = dcag::iso_contour(result, contour->first, contour->second);
    const std::string name = "contour_" + contour_text.substr(0, contour_text.find('=')) + ".txt";
    auto os = open_artifact(dir / name);
    dcag::write_polylines(os, lines);
    manifest.add("contour", contour_text);
    manifest.add("contour_polylines", std::to_string(lines.size()));
    manifest.artifact(dir / name);
    std::cout << "contour_polylines = " << lines.size() << '\n';
  }
  manifest.write(dir);
  return 0;
}

void write_heads_csv(const fs::path& p, const dcag::Tensor& x) {
  auto os = open_artifact(p);
  os << "token,head,channel,value\n";
  for (std::size_t t = 0; t < x.dim(0); ++t)
    for (std::size_t h = 0; h < x.dim(1); ++h)
      for (std::size_t c = 0; c < x.dim(2); ++c) os << t << ',' << h << ',' << c << ',' << dcag::format_number(x(t, h, c)) << '\n';
}

int cmd_attend(const CommonOptions& o, const std::string& config_path, bool check) {
  validate_common(o, false);
  const dcag::GuidanceConfig cfg = dcag::load_guidance_config(config_path);
  const auto shape = o.shape();
  if (cfg.token_range && *cfg.token_range != dcag::TokenRange{o.txt_tokens, o.txt_tokens + o.img_tokens}) {
    throw dcag::ConfigError(config_path + ": token_range " + std::to_string(cfg.token_range->begin) + ":" +
                            std::to_string(cfg.token_range->end) + " does not match the image tokens at " +
                            std::to_string(o.txt_tokens) + ":" + std::to_string(o.txt_tokens + o.img_tokens));
  }

  const fs::path dir = prepare_out_dir(o.out);
  // Layer 0 of the toy stack with the same seed.
  dcag::Rng rng(dcag::derive_seed(o.seed, 0));
  const dcag::LayerWeights w = dcag::LayerWeights::random(o.dim, o.heads, rng);
  const dcag::StreamBatch x = dcag::make_toy_input(shape, o.seed);

  const dcag::JointQKV pre = dcag::project_qkv(x, w);
  const dcag::JointQKV post = dcag::apply_dcag(pre, cfg);
  const dcag::Tensor weights = dcag::attention_weights(post);
  const dcag::StreamBatch out = dcag::joint_attention(post);

  Manifest manifest("attend", o);
  manifest.add("config", fs::path(config_path).filename().string());
  for (const auto& [name, t] : {std::pair{"k_pre.csv", &pre.k}, std::pair{"k_post.csv", &post.k},
                                std::pair{"v_pre.csv", &pre.v}, std::pair{"v_post.csv", &post.v}}) {
    write_heads_csv(dir / name, *t);
    manifest.artifact(dir / name);
  }
  {
    auto os = open_artifact(dir / "attention.csv");
    os << "head,query,key,weight\n";
    for (std::size_t h = 0; h < weights.dim(0); ++h)
      for (std::size_t i = 0; i < weights.dim(1); ++i)
        for (std::size_t j = 0; j < weights.dim(2); ++j)
          os << h << ',' << i << ',' << j << ',' << dcag::format_number(weights(h, i, j)) << '\n';
    manifest.artifact(dir / "attention.csv");
  }
  {
    auto os = open_artifact(dir / "output.csv");
    os << "stream,token,channel,value\n";
    for (const auto& [stream, t] : {std::pair{"txt", &out.txt}, std::pair{"img", &out.img}})
      for (std::size_t i = 0; i < t->dim(0); ++i)
        for (std::size_t c = 0; c < t->dim(1); ++c) os << stream << ',' << i << ',' << c << ',' << dcag::format_number((*t)(i, c)) << '\n';
    manifest.artifact(dir / "output.csv");
  }

  int status = 0;
  if (check) {
    for (const auto& r : dcag::check_invariants(x, w, cfg)) {
      std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " error=" << dcag::format_number(r.error)
                << " tolerance=" << dcag::format_number(r.tolerance) << '\n';
      manifest.add("check." + r.name, r.passed ? "pass" : "fail");
      if (!r.passed) status = kExitFailure;
    }
  }
  manifest.write(dir);
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-channel attention guidance: profiling, sweeps and guided forward passes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dcag::kVersion);

  CommonOptions common;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--layers", common.layers, "Attention layers in the toy stack")->capture_default_str();
    sub->add_option("--steps", common.steps, "Denoising steps")->capture_default_str();
    sub->add_option("--seed", common.seed, "Seed for weights and inputs")->capture_default_str();
    sub->add_option("--heads", common.heads, "Attention heads")->capture_default_str();
    sub->add_option("--dim", common.dim, "Hidden dimension")->capture_default_str();
    sub->add_option("--txt-tokens", common.txt_tokens, "Text tokens")->capture_default_str();
    sub->add_option("--img-tokens", common.img_tokens, "Image tokens")->capture_default_str();
    sub->add_option("--out", common.out, "Output directory")->capture_default_str();
  };

  auto* profile = app.add_subcommand("profile", "Delta-to-bias ratio profile of K and V per layer and step");
  add_common(profile);
  bool heatmap = false;
  profile->add_flag("--heatmap", heatmap, "Also write PGM heatmaps");

  auto* sweep = app.add_subcommand("sweep", "Fidelity sweep over the (delta_k, delta_v) grid");
  add_common(sweep);
  std::string dk = "1.0:1.2:5", dv = "1.0:1.2:5", contour;
  sweep->add_option("--dk", dk, "delta_k range start:stop:count")->capture_default_str();
  sweep->add_option("--dv", dv, "delta_v range start:stop:count")->capture_default_str();
  sweep->add_option("--contour", contour, "Iso-fidelity contour metric=level (mse, psnr, ssim)");

  auto* attend = app.add_subcommand("attend", "Single guided attention pass with CSV dumps");
  add_common(attend);
  std::string config;
  bool check = false;
  attend->add_option("--config", config, "Guidance configuration file")->required();
  attend->add_flag("--check", check, "Verify the guidance invariants on this input");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*profile) return cmd_profile(common, heatmap);
    if (*sweep) return cmd_sweep(common, dk, dv, contour);
    if (*attend) return cmd_attend(common, config, check);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const dcag::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
