// Copyright 2026 The Vton Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vton/alloc.hpp"
#include "vton/audit.hpp"
#include "vton/experiment.hpp"
#include "vton/ops.hpp"
#include "vton/run.hpp"
#include "vton/synth.hpp"

namespace fs = std::filesystem;
using namespace vton;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCheck = 3;
constexpr const char* kDataEnv = "VTON_DATA_DIR";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path data_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kDataEnv); env && *env) return env;
  throw UsageError(std::string("--data is required (or set ") + kDataEnv + ")");
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig c = path.empty() ? RunConfig{} : parse_run_config(read_file(path));
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    try {
      set_run_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  return c;
}

void write_loss_curve(const fs::path& path, const std::vector<double>& losses) {
  std::ostringstream o;
  o << "step,loss\n";
  o.precision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) o << i + 1 << ',' << losses[i] << '\n';
  write_file(path, o.str());
}

// ---- gen

struct GenArgs {
  std::uint64_t seed = 0;
  int count = 512;
  double split = 0.9;
  int height = 128;
  int width = 96;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  if (a.count <= 0) throw UsageError("--count must be positive");
  DatasetManifests m;
  try {
    m = gen_dataset(a.seed, a.count, a.split, a.out, a.height, a.width);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::cout << (fs::path(a.out) / "train.txt").string() << "\n";
  std::cerr << "wrote " << m.train.size() << " train and " << m.test.size() << " test samples to " << a.out << "\n";
  return kExitOk;
}

// ---- train

struct TrainArgs {
  std::string config;
  std::vector<std::string> set;
  std::string data;
  std::string out;
  std::string resume;
  int steps = -1;
  std::string trainable;
  std::string dream_lambda;
  int log_every = 100;
};

int cmd_train(const TrainArgs& a) {
  const fs::path data = data_dir(a.data), out = a.out;
  RunConfig config;
  Codec codec = Codec::analytic();
  TrainState state;
  const Split train = load_split(data / "train.txt");
  if (!a.resume.empty()) {
    if (!a.config.empty() || !a.set.empty() || !a.trainable.empty() || !a.dream_lambda.empty()) {
      throw UsageError("--resume replays the checkpoint's config; only --steps may change");
    }
    const Checkpoint c = load_checkpoint(a.resume);
    config = c.config;
    codec = restore_codec(c);
    state = restore_train_state(c);
  } else {
    std::vector<std::string> set = a.set;
    if (!a.trainable.empty()) set.push_back("train.trainable=" + a.trainable);
    if (!a.dream_lambda.empty()) set.push_back("train.dream_lambda=" + a.dream_lambda);
    config = load_config(a.config, set);
  }
  if (a.steps >= 0) config.train.steps = a.steps;
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.resume.empty()) {
    std::vector<double> codec_losses;
    codec = prepare_codec(config, train, &codec_losses);
    if (!codec_losses.empty()) write_loss_curve(out / "codec_loss.csv", codec_losses);
    state = init_train_state(config.unet, config.train);
  }
  fs::create_directories(out);
  write_file(out / "config.txt", format_run_config(config));
  const std::vector<EncodedExample> examples = encode_examples(train.persons, train.garments, train.masks, codec);
  const NoiseSchedule schedule = config.schedule.make();

  fs::path last_good;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const TrainState& s) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt-%06lld.vtck", s.step);
    save_checkpoint(out / name, make_checkpoint(config, s, codec));
    write_loss_curve(out / "loss.csv", s.losses);
    last_good = out / name;
  };
  double running = 0.0;
  int counted = 0;
  hooks.on_step = [&](const TrainState& s, double loss) {
    running += loss;
    ++counted;
    if (a.log_every > 0 && s.step % a.log_every == 0) {
      std::cerr << "step " << s.step << " loss " << running / counted << "\n";
      running = 0.0;
      counted = 0;
    }
  };
  try {
    train_loop(state, examples, config.unet, schedule, config.train, hooks);
  } catch (const std::runtime_error& e) {
    write_loss_curve(out / "loss.csv", state.losses);
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << (last_good.empty() ? "no checkpoint was written" : "last good checkpoint: " + last_good.string()) << "\n";
    return kExitRuntime;
  }
  save_checkpoint(out / "last.vtck", make_checkpoint(config, state, codec));
  write_loss_curve(out / "loss.csv", state.losses);
  std::cout << (out / "last.vtck").string() << "\n";
  return kExitOk;
}

// ---- infer

struct SamplerArgs {
  double cfg = 2.5;
  int steps = -1;
  std::uint64_t seed = 0;
  double eta = 0.0;

  SamplerConfig apply(const RunConfig& config) const {
    SamplerConfig s = config.sampler;
    s.guidance = cfg;
    if (steps > 0) s.steps = steps;
    s.seed = seed;
    s.eta = eta;
    return s;
  }
};

void add_sampler_flags(CLI::App* app, SamplerArgs& s) {
  app->add_option("--cfg", s.cfg, "classifier-free guidance strength")->capture_default_str()->check(CLI::NonNegativeNumber);
  app->add_option("--steps", s.steps, "DDIM steps (default: the checkpoint's sampler.steps)")->check(CLI::PositiveNumber);
  app->add_option("--seed", s.seed, "noise seed")->capture_default_str();
  app->add_option("--eta", s.eta, "DDIM stochasticity in [0, 1]")->capture_default_str()->check(CLI::Range(0.0, 1.0));
}

struct InferArgs {
  std::string checkpoint, person, garment, mask, out;
  SamplerArgs sampler;
};

int cmd_infer(const InferArgs& a) {
  const Checkpoint c = load_checkpoint(a.checkpoint);
  const TryOnModel model = restore_model(c);
  const Image8 person = decode_ppm(read_file(a.person));
  const Image8 garment = decode_ppm(read_file(a.garment));
  const Mask mask = decode_pbm(read_file(a.mask));
  if (person.height != garment.height || person.width != garment.width || person.height != mask.height ||
      person.width != mask.width) {
    throw ShapeError("person, garment and mask extents differ");
  }
  const TryOnRequest request{to_tensor(person), to_tensor(garment), to_tensor(mask)};
  const std::vector<TryOnResult> r = run_tryon(std::span(&request, 1), model, a.sampler.apply(c.config));
  write_file(a.out, encode_ppm(to_image(r[0].image)));
  std::cout << a.out << "\n";
  return kExitOk;
}

// ---- eval

struct EvalArgs {
  std::string checkpoint, data, out;
  bool paired = false, unpaired = false, identity = false;
  SamplerArgs sampler;
};

int cmd_eval(const EvalArgs& a) {
  if (a.paired == a.unpaired) throw UsageError("choose exactly one of --paired and --unpaired");
  if (a.identity == !a.checkpoint.empty()) throw UsageError("give either --checkpoint or --identity");
  const fs::path data = data_dir(a.data);
  const Split test = load_split(data / "test.txt");
  MetricReport report;
  std::ostringstream extra;
  if (a.identity) {
    // Ground truth scored against itself.
    const Codec codec = Codec::analytic();
    report.extractor = toy_extractor_id(codec);
    if (a.paired) {
      report.paired_samples = test.size();
      report.ssim = 0.0;
      for (const TryOnRequest& r : requests_of(test)) report.ssim += ssim(r.person, r.person) / test.size();
      report.psnr = psnr(test.persons, test.persons);
    } else {
      const FeatureSet f = toy_features(test.persons, codec);
      report.unpaired_samples = test.size();
      report.frechet = frechet_distance(f, f);
      report.kid = kid(f, f, a.sampler.seed);
    }
  } else {
    const Checkpoint c = load_checkpoint(a.checkpoint);
    const TryOnModel model = restore_model(c);
    const SamplerConfig sampler = a.sampler.apply(c.config);
    report.extractor = toy_extractor_id(model.codec);
    if (a.paired) {
      const PairedEval e = evaluate_paired(model, sampler, test);
      report.paired_samples = test.size();
      report.ssim = e.ssim;
      report.psnr = e.psnr;
      extra << "agnostic-input SSIM baseline: " << e.baseline_ssim << "\n";
      extra << "outside-mask pixels equal the input: " << (e.outside_exact ? "yes" : "no") << "\n";
    } else {
      const UnpairedEval e = evaluate_unpaired(model, sampler, load_split(data / "test_unpaired.txt"), test);
      report.unpaired_samples = static_cast<int>(e.outputs.size());
      report.frechet = e.frechet;
      report.kid = e.kid;
    }
  }
  const std::string text = format_report(report) + extra.str();
  if (!a.out.empty()) write_file(a.out, text);
  std::cout << text;
  return kExitOk;
}

// ---- audit

struct AuditArgs {
  std::string manifest = "sd15";
  std::string trainable = "self_attention";
  bool check = false, strict = false;
  std::string write_manifest, write_index;
};

int cmd_audit(const AuditArgs& a) {
  const auto set = parse_trainable_set(a.trainable);
  if (!set) throw UsageError("--trainable must be unet, transformers or self_attention");
  ArchManifest m;
  const bool sd15 = a.manifest == "sd15", toy = a.manifest == "toy";
  if (sd15) {
    m = sd15_manifest();
  } else if (toy) {
    m = toy_manifest();
  } else {
    const std::string bytes = read_file(a.manifest);
    m = bytes.rfind("VTIX", 0) == 0 ? manifest_from_index(parse_checkpoint_index(bytes)) : parse_manifest_text(bytes);
  }
  if (!a.write_manifest.empty()) write_file(a.write_manifest, format_manifest_text(m));
  if (!a.write_index.empty()) write_file(a.write_index, encode_checkpoint_index(index_from_manifest(m)));
  const AuditReport r = audit_report(m, *set, a.check && !toy);
  std::cout << format_audit(r);
  bool ok = true;
  if (a.check && toy) {
    const Index live = build_unet(UNetConfig::toy(), 0).count();
    const bool same = live == count_params(m);
    std::cout << "\nchecks:\n  [" << (same ? "ok" : "MISS") << "] toy manifest " << count_params(m) << " vs live model "
              << live << "\n";
    ok = same;
  } else if (a.check) {
    ok = all_targets_met(r);
  }
  if (a.strict && !r.unclassified.empty()) {
    std::cerr << r.unclassified.size() << " unclassified descriptors\n";
    ok = false;
  }
  return ok ? kExitOk : kExitCheck;
}

// ---- sweep

struct SweepArgs {
  std::string param;
  std::string values;
  std::string config;
  std::vector<std::string> set;
  std::string checkpoint;
  std::string data;
  std::string out;
  int steps = -1;
  bool unpaired = false;
  SamplerArgs sampler;
};

std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) throw UsageError("empty entry in --values");
    out.push_back(item);
  }
  if (out.empty()) throw UsageError("--values is empty");
  return out;
}

double parse_value(const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw UsageError("not a number in --values: '" + v + "'");
  return x;
}

int cmd_sweep(const SweepArgs& a) {
  const fs::path data = data_dir(a.data), out = a.out;
  const std::vector<std::string> values = split_values(a.values);
  const bool cfg = a.param == "cfg";
  if (cfg && a.checkpoint.empty()) throw UsageError("--param cfg needs --checkpoint");
  if (!cfg && !a.checkpoint.empty()) throw UsageError("--param " + a.param + " trains per value; drop --checkpoint");
  std::vector<double> numbers;
  for (const std::string& v : values) {
    if (a.param == "trainable") {
      if (!parse_trainable_set(v)) throw UsageError("unknown trainable set '" + v + "'");
    } else {
      numbers.push_back(parse_value(v));
    }
  }
  const Split test = load_split(data / "test.txt");
  const Split unpaired = a.unpaired ? load_split(data / "test_unpaired.txt") : Split{};
  fs::create_directories(out);
  const fs::path table = out / "sweep.txt";
  std::ofstream file(table);
  if (!file) throw std::runtime_error("cannot write " + table.string());

  Checkpoint base;
  RunConfig config;
  if (cfg) {
    base = load_checkpoint(a.checkpoint);
    config = base.config;
  } else {
    config = load_config(a.config, a.set);
    if (a.steps >= 0) config.train.steps = a.steps;
    config.validate();
  }
  std::string header = "| " + a.param + " | paired SSIM | paired PSNR (dB) |";
  if (a.unpaired) header += " unpaired Frechet | unpaired KID (x1000) |";
  if (cfg) header += " deviation from first value |";
  std::string rule = "|";
  for (char ch : header) {
    if (ch == '|') rule += "---|";
  }
  rule.resize(rule.size() - 4);
  file << header << "\n" << rule << "\n" << std::flush;
  std::cout << header << "\n" << rule << "\n";

  const Split train = cfg ? Split{} : load_split(data / "train.txt");
  std::vector<Tensor> first;
  for (std::size_t i = 0; i < values.size(); ++i) {
    TryOnModel model;
    SamplerConfig sampler = a.sampler.apply(config);
    if (cfg) {
      model = restore_model(base);
      sampler.guidance = numbers[i];
    } else {
      RunConfig run = config;
      if (a.param == "trainable") {
        run.train.trainable = *parse_trainable_set(values[i]);
      } else {
        run.train.dream.lambda = numbers[i];
      }
      const Codec codec = prepare_codec(run, train);
      const auto examples = encode_examples(train.persons, train.garments, train.masks, codec);
      TrainState state = init_train_state(run.unet, run.train);
      train_loop(state, examples, run.unet, run.schedule.make(), run.train);
      save_checkpoint(out / ("value-" + std::to_string(i) + ".vtck"), make_checkpoint(run, state, codec));
      model = TryOnModel{run.unet, state.params, codec, run.schedule.make()};
    }
    const PairedEval e = evaluate_paired(model, sampler, test);
    std::ostringstream row;
    row.setf(std::ios::fixed);
    row.precision(4);
    row << "| " << values[i] << " | " << e.ssim << " | " << e.psnr << " |";
    if (a.unpaired) {
      const UnpairedEval u = evaluate_unpaired(model, sampler, unpaired, test);
      row << " " << u.frechet << " | " << 1000.0 * u.kid.mean << " |";
    }
    if (cfg) {
      if (i == 0) first = e.outputs;
      row << " " << output_distance(e.outputs, first) << " |";
    }
    file << row.str() << "\n" << std::flush;
    std::cout << row.str() << "\n" << std::flush;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  vton::retain_freed_memory();
  CLI::App app{"Mask-based virtual try-on with a single self-attention UNet"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand all subcommand help");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic paired dataset");
  g->add_option("--seed", gen.seed, "dataset seed")->capture_default_str();
  g->add_option("--count", gen.count, "number of samples")->capture_default_str();
  g->add_option("--split", gen.split, "training fraction")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  g->add_option("--height", gen.height, "image height")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--width", gen.width, "image width")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "output directory")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train the toy try-on UNet");
  t->add_option("--config", train.config, "run config file (key = value)");
  t->add_option("--set", train.set, "config override key=value, repeatable")->allow_extra_args(false);
  t->add_option("--data", train.data, std::string("dataset directory (default: $") + kDataEnv + ")");
  t->add_option("--out", train.out, "output directory")->required();
  t->add_option("--resume", train.resume, "continue from a checkpoint");
  t->add_option("--steps", train.steps, "total training steps")->check(CLI::NonNegativeNumber);
  t->add_option("--trainable", train.trainable, "unet, transformers or self_attention");
  t->add_option("--dream-lambda", train.dream_lambda, "DREAM rectification strength (inf disables)");
  t->add_option("--log-every", train.log_every, "loss log interval")->capture_default_str();

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "dress a person in a garment");
  i->add_option("--checkpoint", infer.checkpoint, "trained checkpoint")->required();
  i->add_option("--person", infer.person, "person image (PPM)")->required();
  i->add_option("--garment", infer.garment, "garment reference image (PPM)")->required();
  i->add_option("--mask", infer.mask, "inpainting mask (PBM, 1 = regenerate)")->required();
  i->add_option("--out", infer.out, "output image (PPM)")->required();
  add_sampler_flags(i, infer.sampler);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "score a checkpoint on the test split");
  e->add_option("--checkpoint", eval.checkpoint, "trained checkpoint");
  e->add_flag("--identity", eval.identity, "score the ground truth against itself");
  e->add_option("--data", eval.data, std::string("dataset directory (default: $") + kDataEnv + ")");
  e->add_flag("--paired", eval.paired, "SSIM and PSNR against ground truth");
  e->add_flag("--unpaired", eval.unpaired, "Frechet distance and KID on swapped garments");
  e->add_option("--out", eval.out, "report file");
  add_sampler_flags(e, eval.sampler);

  AuditArgs audit;
  auto* au = app.add_subcommand("audit", "count parameters and check the reference budget");
  au->add_option("--manifest,manifest", audit.manifest, "sd15, toy, or a manifest file (text or VTIX index)")
      ->capture_default_str();
  au->add_option("--trainable", audit.trainable, "unet, transformers or self_attention")->capture_default_str();
  au->add_flag("--check", audit.check, "exit 3 if a reference value misses its tolerance");
  au->add_flag("--strict", audit.strict, "exit 3 if any descriptor is unclassified");
  au->add_option("--write-manifest", audit.write_manifest, "write the manifest as text");
  au->add_option("--write-index", audit.write_index, "write the manifest as a binary index");

  SweepArgs sweep;
  auto* s = app.add_subcommand("sweep", "ablation grid over one knob");
  s->add_option("--param", sweep.param, "cfg, dream_lambda or trainable")
      ->required()
      ->check(CLI::IsMember({"cfg", "dream_lambda", "trainable"}));
  s->add_option("--values", sweep.values, "comma-separated values")->required();
  s->add_option("--checkpoint", sweep.checkpoint, "base checkpoint (cfg)");
  s->add_option("--config", sweep.config, "run config for per-value training");
  s->add_option("--set", sweep.set, "config override key=value, repeatable")->allow_extra_args(false);
  s->add_option("--train-steps", sweep.steps, "training steps per value")->check(CLI::NonNegativeNumber);
  s->add_option("--data", sweep.data, std::string("dataset directory (default: $") + kDataEnv + ")");
  s->add_option("--out", sweep.out, "output directory")->required();
  s->add_flag("--unpaired", sweep.unpaired, "add Frechet and KID columns");
  add_sampler_flags(s, sweep.sampler);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(train);
    if (*i) return cmd_infer(infer);
    if (*e) return cmd_eval(eval);
    if (*au) return cmd_audit(audit);
    if (*s) return cmd_sweep(sweep);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& err) {
    std::cerr << "parse error at byte " << err.offset() << ": " << err.what() << "\n";
    return kExitRuntime;
  } catch (const ShapeError& err) {
    std::cerr << "shape error: " << err.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
