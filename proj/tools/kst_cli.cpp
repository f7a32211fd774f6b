// Command-line front end: gen-data, gen-mask, train, eval, reconstruct,
// dump-attn, bench.

#include "kst/bench.hpp"
#include "kst/io.hpp"
#include "kst/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

using namespace kst;

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string resume;
  std::optional<int> precision;
  std::string data_consistency;
  std::vector<std::string> positional;
};

RunConfig resolve(const Options& o) {
  RunConfig c;
  try {
    c = o.config.empty() ? default_run_config() : load_run_config(o.config);
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
  if (o.seed) {
    c.train.seed = *o.seed;
    c.data.seed = *o.seed;
  }
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.precision) c.precision = *o.precision;
  if (o.data_consistency == "on") c.model.data_consistency = true;
  if (o.data_consistency == "off") c.model.data_consistency = false;
  return c;
}

std::vector<PhantomSample> train_set(const RunConfig& c) {
  if (!c.data.dir.empty()) return read_dataset(fs::path(c.data.dir) / "train");
  return generate_phantoms(c.data.train_count, c.data.height, c.data.width, c.data.seed);
}

std::vector<PhantomSample> test_set(const RunConfig& c) {
  if (!c.data.dir.empty()) return read_dataset(fs::path(c.data.dir) / "test");
  return generate_phantoms(c.data.test_count, c.data.height, c.data.width, c.data.seed,
                           c.data.test_first_index);
}

// The checkpoint's configuration wins over the run config for the model; the
// data and output settings come from the run config.
Checkpoint checkpoint_arg(const Options& o, const char* verb) {
  if (o.positional.empty()) throw UsageError(std::string(verb) + ": expected a checkpoint path");
  return load_checkpoint(o.positional[0]);
}

ModelConfig model_for(const Checkpoint& ck, const Options& o) {
  ModelConfig m = ck.model;
  if (o.data_consistency == "on") m.data_consistency = true;
  if (o.data_consistency == "off") m.data_consistency = false;
  return m;
}

int cmd_gen_data(const Options& o) {
  const RunConfig c = resolve(o);
  const fs::path out = fs::path(c.out_dir) / "data";
  RunConfig mem = c;
  mem.data.dir.clear();
  write_dataset(out / "train", train_set(mem), c.data.seed);
  write_dataset(out / "test", test_set(mem), c.data.seed);
  std::printf("wrote %zu training and %zu held-out samples to %s\n", c.data.train_count,
              c.data.test_count, out.string().c_str());
  return 0;
}

int cmd_gen_mask(const Options& o) {
  const RunConfig c = resolve(o);
  MaskSpec spec = c.train.mask;
  if (o.seed) spec.seed = *o.seed;
  const Mask mask = make_mask(spec, c.data.height, c.data.width);
  const fs::path out(c.out_dir);
  save_grid(out / "mask.kgrid", mask_to_grid(mask));
  Image preview{mask.height(), mask.width(),
                std::vector<double>(mask.bits().begin(), mask.bits().end())};
  write_png(out / "mask.png", preview, 1.0);
  std::printf("acceleration %.6f (%zu of %zu bins)\n", acceleration(mask), mask.count(),
              mask.height() * mask.width());
  return 0;
}

template <typename T>
int train_impl(const RunConfig& c, const Options& o) {
  const fs::path out(c.out_dir);
  fs::create_directories(out);
  const auto data = train_set(c);
  TrainState<T> state;
  std::vector<LossRecord> previous;
  if (!o.resume.empty()) {
    const Checkpoint ck = load_checkpoint(o.resume);
    if (!(ck.model == c.model) || !(ck.train == c.train)) {
      throw std::runtime_error("resume: checkpoint configuration differs from the run config");
    }
    state = train_state_from_checkpoint<T>(ck);
    const fs::path csv = out / "loss.csv";
    if (fs::exists(csv)) {
      for (const auto& r : parse_loss_csv(read_file(csv))) {
        if (r.step < ck.step) previous.push_back(r);
      }
    }
    if (previous.size() != ck.step) {
      throw std::runtime_error("resume: loss.csv in " + out.string() + " does not cover the " +
                               std::to_string(ck.step) + " completed steps");
    }
  } else {
    state = initial_train_state<T>(c.model, c.train, data.size());
  }
  state.history = previous;

  auto save = [&](const fs::path& path) {
    save_checkpoint(path, make_checkpoint(state, c.model, c.train, c.precision));
    write_file_atomic(out / "loss.csv", loss_csv(state.history));
  };
  TrainHooks hooks;
  hooks.after_step = [&](std::size_t step) {
    if (c.checkpoint_every > 0 && step % c.checkpoint_every == 0 && step < state.total_steps) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06zu.kckpt", step);
      save(out / name);
    }
    if (step % 50 == 0 || step == state.total_steps) {
      const auto& r = state.history.back();
      std::fprintf(stderr, "step %zu/%zu loss %.5f (lr %.5f, hr %.5f) rate %.3g\n", step,
                   state.total_steps, r.loss, r.lr_loss, r.hr_loss, r.learning_rate);
    }
  };
  try {
    train(state, c.model, c.train, data, hooks);
  } catch (const NumericalError& e) {
    json dump = {{"error", e.what()}, {"completed_steps", state.step()}};
    json recent = json::array();
    const std::size_t k = state.history.size() > 10 ? state.history.size() - 10 : 0;
    for (std::size_t i = k; i < state.history.size(); ++i) {
      const auto& r = state.history[i];
      recent.push_back({{"step", r.step}, {"loss", r.loss}, {"lr_loss", r.lr_loss},
                        {"hr_loss", r.hr_loss}, {"learning_rate", r.learning_rate}});
    }
    dump["recent"] = recent;
    write_file_atomic(out / "divergence.json", dump.dump(2) + "\n");
    write_file_atomic(out / "loss.csv", loss_csv(state.history));
    throw;
  }
  save(out / "checkpoint.kckpt");
  std::printf("trained %zu steps; checkpoint %s\n", state.step(),
              (out / "checkpoint.kckpt").string().c_str());
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve(o);
  return c.precision == 64 ? train_impl<double>(c, o) : train_impl<float>(c, o);
}

Mask eval_mask(const RunConfig& c, const ModelConfig& m) {
  return make_mask(c.train.mask, m.hr_height, m.hr_width);
}

template <typename T>
int eval_impl(const RunConfig& c, const Checkpoint& ck, const ModelConfig& m) {
  const fs::path out(c.out_dir);
  const auto params = ck.params.cast<T>();
  const auto data = test_set(c);
  const Mask mask = eval_mask(c, m);
  const EvalReport rep = evaluate(params, m, data, mask);
  write_file_atomic(out / "metrics.csv", metrics_csv(rep));
  write_file_atomic(out / "summary.csv", summary_csv(rep));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto rec = reconstruct(params, m, data[i].spectrogram, mask);
    const Image gt = magnitude_image(data[i].image);
    const Image zf = magnitude_image(rec.zero_filled);
    const Image img = magnitude_image(rec.image);
    Image err = img;
    for (std::size_t k = 0; k < err.pixels.size(); ++k) {
      err.pixels[k] = std::abs(img.pixels[k] - gt.pixels[k]);
    }
    char stem[64];
    std::snprintf(stem, sizeof stem, "images/sample_%05zu_", i);
    const double peak = gt.max();
    write_png(out / (std::string(stem) + "gt.png"), gt, peak);
    write_png(out / (std::string(stem) + "zero_filled.png"), zf, peak);
    write_png(out / (std::string(stem) + "recon.png"), img, peak);
    write_png(out / (std::string(stem) + "error.png"), err, peak);
  }
  std::printf("psnr %.4f +- %.4f (zero-filled %.4f)  ssim %.4f (zero-filled %.4f)\n",
              rep.mean_psnr, rep.std_psnr, rep.mean_zero_filled_psnr, rep.mean_ssim,
              rep.mean_zero_filled_ssim);
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig c = resolve(o);
  const Checkpoint ck = checkpoint_arg(o, "eval");
  const ModelConfig m = model_for(ck, o);
  return c.precision == 64 ? eval_impl<double>(c, ck, m) : eval_impl<float>(c, ck, m);
}

int cmd_reconstruct(const Options& o) {
  const RunConfig c = resolve(o);
  const Checkpoint ck = checkpoint_arg(o, "reconstruct");
  if (o.positional.size() < 2) throw UsageError("reconstruct: expected CHECKPOINT INPUT");
  const ModelConfig m = model_for(ck, o);
  const GridFile in = load_grid(o.positional[1]);
  ComplexGrid spectrogram;
  if (in.kind == GridKind::Spectrogram) {
    spectrogram = complex_from_grid(in);
  } else if (in.kind == GridKind::ComplexImage) {
    spectrogram = fft2_centered(complex_from_grid(in));
  } else {
    throw UsageError("reconstruct: input must be a spectrogram or complex image grid");
  }
  const Mask mask = eval_mask(c, m);
  const Reconstruction rec = c.precision == 64
                                 ? reconstruct(ck.params.cast<double>(), m, spectrogram, mask)
                                 : reconstruct(ck.params, m, spectrogram, mask);
  const fs::path out(c.out_dir);
  save_grid(out / "reconstruction.kgrid", complex_to_grid(rec.image, GridKind::ComplexImage));
  write_png(out / "reconstruction.png", magnitude_image(rec.image));
  std::printf("wrote %s\n", (out / "reconstruction.png").string().c_str());
  return 0;
}

int cmd_dump_attn(const Options& o) {
  const RunConfig c = resolve(o);
  const Checkpoint ck = checkpoint_arg(o, "dump-attn");
  const ModelConfig m = model_for(ck, o);
  RunConfig one = c;
  one.data.test_count = c.attn_sample + 1;
  const auto data = test_set(one);
  if (c.attn_sample >= data.size()) throw UsageError("dump-attn: attn_sample out of range");
  const Mask mask = eval_mask(c, m);
  const auto masked = apply_mask(data[c.attn_sample].spectrogram, mask);
  AttentionProbe probe;
  probe.keep_probabilities = true;
  forward(masked.points, ck.params, m, ForwardOptions{&probe, false});
  const fs::path out = fs::path(c.out_dir) / "attention";
  std::size_t files = 0;
  for (std::size_t p : c.attn_points) {
    const auto enc = encoder_attention_map(probe, masked.points, m.n_enc - 1, p);
    const auto hr = hr_attention_map(probe, m, m.n_hr - 1, p);
    for (std::size_t h = 0; h < enc.heads; ++h) {
      char name[96];
      std::snprintf(name, sizeof name, "encoder_point%05zu_head%zu.png", p, h);
      write_png(out / name, Image{enc.height, enc.width, enc.per_head[h]});
      std::snprintf(name, sizeof name, "hr_bin%05zu_head%zu.png", p, h);
      write_png(out / name, Image{hr.height, hr.width, hr.per_head[h]});
      files += 2;
    }
  }
  std::printf("wrote %zu attention maps to %s\n", files, out.string().c_str());
  return 0;
}

int cmd_bench(const Options& o) {
  const RunConfig c = resolve(o);
  BenchConfig b = c.bench;
  b.model = c.model;
  if (o.seed) b.seed = *o.seed;
  const auto rows = measure(b);
  write_file_atomic(fs::path(c.out_dir) / "bench.csv", bench_csv(rows));
  for (const auto& p : rows) {
    std::printf("m=%zu n=%zu l=%zu hr_layers=%zu  standard=%llu hier=%llu  median %.2f ms\n", p.m,
                p.n, p.l, p.n_hr, static_cast<unsigned long long>(p.standard.total),
                static_cast<unsigned long long>(p.hier.total), p.wall_ms_median);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"K-space transformer for undersampled MRI reconstruction"};
  app.require_subcommand(1);
  Options o;
  auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Overrides the data and training seeds");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--precision", o.precision, "Floating-point width")
        ->check(CLI::IsMember({32, 64}));
    sub->add_option("--data-consistency", o.data_consistency, "Overwrite sampled bins")
        ->check(CLI::IsMember({"on", "off"}));
  };
  struct Verb {
    const char* name;
    const char* help;
    int (*run)(const Options&);
    const char* positional;
  };
  const Verb verbs[] = {
      {"gen-data", "Write synthetic phantom datasets", cmd_gen_data, nullptr},
      {"gen-mask", "Write a sampling mask and its preview", cmd_gen_mask, nullptr},
      {"train", "Train a model", cmd_train, nullptr},
      {"eval", "Evaluate a checkpoint on held-out phantoms", cmd_eval, "CHECKPOINT"},
      {"reconstruct", "Reconstruct one input grid", cmd_reconstruct, "CHECKPOINT INPUT"},
      {"dump-attn", "Write encoder and HR attention maps", cmd_dump_attn, "CHECKPOINT"},
      {"bench", "Attention cost formulas and timing sweep", cmd_bench, nullptr},
  };
  int (*selected)(const Options&) = nullptr;
  for (const auto& v : verbs) {
    auto* sub = app.add_subcommand(v.name, v.help);
    common(sub);
    if (std::string(v.name) == "train") {
      sub->add_option("--resume", o.resume, "Checkpoint to resume from")
          ->check(CLI::ExistingFile);
    }
    if (v.positional) sub->add_option("args", o.positional, v.positional)->required();
    sub->callback([&selected, run = v.run] { selected = run; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  try {
    return selected(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
