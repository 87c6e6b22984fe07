#include "deepwound/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "deepwound/dataset.hpp"
#include "deepwound/ensemble.hpp"
#include "deepwound/error.hpp"
#include "deepwound/imaging.hpp"
#include "deepwound/metrics.hpp"
#include "deepwound/service.hpp"
#include "deepwound/training.hpp"
#include "deepwound/woundnet.hpp"

// After Eigen: <resolv.h> (via httplib) defines a `_res` macro.
#include <httplib.h>

namespace deepwound::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kPreprocessMarker = "preprocessed.json";

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  f << text;
}

struct PreprocessArgs {
  std::string manifest, out;
  int input_size = imaging::kInputSide;
};

int cmd_preprocess(const PreprocessArgs& a, std::ostream& out, std::ostream& err) {
  const auto entries = dataset::load_manifest(a.manifest);
  const fs::path dir(a.out);
  fs::create_directories(dir / "images");
  dataset::Manifest written;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    std::ostringstream name;
    name << std::setw(5) << std::setfill('0') << i << '_' << fs::path(e.image_path).stem().string() << ".png";
    const auto rel = fs::path("images") / name.str();
    imaging::write_png(imaging::preprocess(imaging::read_image(e.image_path), a.input_size), (dir / rel).string());
    written.push_back({rel.string(), e.labels, e.source_tag});
  }
  dataset::save_manifest(written, (dir / "manifest.csv").string());
  const imaging::ClaheConfig clahe;
  write_text(dir / kPreprocessMarker,
             json{{"input_side", a.input_size},
                  {"clahe", {{"tile_grid", clahe.tile_grid}, {"clip_factor", clahe.clip_factor}}},
                  {"source_manifest", fs::absolute(a.manifest).string()}}
                     .dump(2) +
                 "\n");
  out << written.size() << " images written to " << (dir / "manifest.csv").string() << '\n';
  err << "preprocess: done\n";
  return kOk;
}

struct TrainArgs {
  std::string manifest, variant = "all", out, backbone;
  std::uint64_t seed = 0;
  double ratio = 0.8;
  std::optional<int> input_size;
  int epochs1 = 30, epochs2 = 50, batch_size = 64;
  bool no_augment = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<woundnet::ModelVariant> variants;
  if (a.variant == "all") {
    variants = woundnet::ModelVariant::all();
  } else if (auto v = woundnet::variant_from_name(a.variant)) {
    variants.push_back(*v);
  } else {
    err << "error: --variant must be A, B, C or all\n";
    return kUsage;
  }

  const auto entries = dataset::load_manifest(a.manifest);
  const auto marked = preprocessed_side(a.manifest);
  const int side = a.input_size.value_or(marked.value_or(imaging::kInputSide));
  if (marked && *marked != side) {
    throw Error(ErrorCode::kShapeMismatch, a.manifest + " holds " + std::to_string(*marked) +
                                               "px preprocessed images; --input-size is " + std::to_string(side));
  }
  if (side < 32 || side % 32 != 0) {
    throw Error(ErrorCode::kInvalidConfig, "--input-size must be a positive multiple of 32");
  }

  woundnet::BackboneSource backbone;
  const std::string source = a.backbone.empty() ? env_or("DEEPWOUND_BACKBONE", "") : a.backbone;
  if (source == "random") {
    backbone = woundnet::BackboneSource::seeded_random(a.seed);
  } else if (source.empty()) {
    throw Error(ErrorCode::kWeightsUnavailable,
                "no backbone weights given: pass --backbone PATH (see tools/export_vgg16_backbone.py) or "
                "--backbone random");
  } else {
    backbone = woundnet::BackboneSource::pretrained(source);
  }

  const auto split = dataset::split_dataset(entries, a.ratio, a.seed);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  dataset::save_manifest(split.train, (dir / "train.csv").string());
  dataset::save_manifest(split.validation, (dir / "validation.csv").string());

  training::TrainConfig cfg;
  cfg.seed = a.seed;
  cfg.batch_size = a.batch_size;
  cfg.phase1.epochs = a.epochs1;
  cfg.phase2.epochs = a.epochs2;
  cfg.augment_enabled = !a.no_augment;
  cfg.checkpoint_dir = (dir / "checkpoints").string();
  cfg.validate();

  const auto loader = training::caching_disk_loader(side, {}, marked.has_value());
  for (const auto& variant : variants) {
    const std::string name = woundnet::to_string(variant.id);
    auto model = woundnet::build_woundnet(variant, backbone, side, a.seed);
    err << "train " << name << ": freeze through layer " << variant.freeze_through_index << ", "
        << woundnet::trainable_parameter_count(model) << " trainable parameters, " << split.train.size()
        << " train / " << split.validation.size() << " validation\n";
    auto [trained, report] = training::train(std::move(model), split, cfg, loader, [&](const training::EpochRecord& r) {
      err << "  " << name << " phase " << r.phase << " epoch " << r.epoch << " train_loss " << r.train_loss;
      if (r.val_loss) err << " val_loss " << *r.val_loss;
      err << " (" << std::fixed << std::setprecision(1) << r.seconds << "s)\n" << std::defaultfloat;
    });
    const auto bundle = dir / (name + ".dwm");
    woundnet::save_model(trained, bundle.string());
    write_text(dir / (name + ".train.jsonl"), report.to_jsonl());
    out << bundle.string() << '\n';
  }
  return kOk;
}

struct EnsembleArgs {
  std::string models, out, version;
  double threshold = ensemble::kDecisionThreshold;
};

int cmd_ensemble(const EnsembleArgs& a, std::ostream& out, std::ostream&) {
  std::array<std::string, ensemble::kMembers> files;
  const char* names[] = {"A", "B", "C"};
  for (std::size_t m = 0; m < ensemble::kMembers; ++m) {
    files[m] = (fs::path(a.models) / (std::string(names[m]) + ".dwm")).string();
    if (!fs::exists(files[m])) throw Error(ErrorCode::kCorruptBundle, "missing model bundle " + files[m]);
  }
  ensemble::assemble_ensemble(a.out, files, a.version, a.threshold);
  ensemble::load_ensemble(a.out);  // read back once so a broken bundle fails here
  out << a.out << '\n';
  return kOk;
}

struct EvaluateArgs {
  std::string bundle, manifest, out;
  int saliency = 0;
  std::string saliency_label = "wound";
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  const auto label = label_index(a.saliency_label);
  if (!label) {
    err << "error: unknown --saliency-label " << a.saliency_label << '\n';
    return kUsage;
  }
  const auto bundle = ensemble::load_ensemble(a.bundle);
  const auto entries = dataset::load_manifest(a.manifest);
  const auto stage = preprocessed_side(a.manifest) ? ensemble::InputStage::kPreprocessed : ensemble::InputStage::kRaw;
  const auto result = metrics::evaluate_ensemble(
      bundle, entries, [](const dataset::ManifestEntry& e) { return imaging::read_image(e.image_path); }, stage);
  metrics::write_evaluation(result.report, a.out);

  out << "label\tacc\tsens\tspec\tf1\tauc\n";
  auto cell = [](const std::optional<double>& v) {
    std::ostringstream s;
    if (v) {
      s << std::fixed << std::setprecision(3) << *v;
    } else {
      s << "undef";
    }
    return s.str();
  };
  for (const auto& l : result.report.labels) {
    out << l.row.label << '\t' << cell(l.row.accuracy) << '\t' << cell(l.row.sensitivity) << '\t'
        << cell(l.row.specificity) << '\t' << cell(l.row.f1) << '\t'
        << (l.roc ? cell(l.roc->auc) : std::string("degenerate")) << '\n';
  }

  if (a.saliency > 0) {
    // Saliency needs gradients, so it is taken from the first member.
    const auto* model = dynamic_cast<const woundnet::ModelHandle*>(bundle.members()[0].get());
    const fs::path dir = fs::path(a.out) / "saliency";
    fs::create_directories(dir);
    const int n = std::min<int>(a.saliency, static_cast<int>(entries.size()));
    for (int i = 0; i < n; ++i) {
      const int side = model->input_side();
      auto img = imaging::read_image(entries[i].image_path);
      if (stage == ensemble::InputStage::kRaw) img = imaging::preprocess(img, side);
      const auto input = imaging::to_model_input(img, model->preprocessing_tag(), side);
      const auto map = metrics::saliency_map(*model, input, *label);
      std::ostringstream stem;
      stem << std::setw(4) << std::setfill('0') << i << '_' << a.saliency_label;
      imaging::write_png(metrics::saliency_gray(map, side), (dir / (stem.str() + "_gray.png")).string());
      imaging::write_png(metrics::saliency_overlay(map, img), (dir / (stem.str() + "_heat.png")).string());
    }
    err << "evaluate: " << n << " saliency maps in " << dir.string() << '\n';
  }
  return kOk;
}

struct PredictArgs {
  std::string bundle, image;
};

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream&) {
  const auto bundle = ensemble::load_ensemble(a.bundle);
  const auto img = imaging::read_image(a.image);
  const auto assessment = ensemble::assess(bundle, img);
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    const auto& l = assessment.labels[k];
    out << kLabelNames[k] << '\t' << (l.decision ? 1 : 0) << '\t' << std::setprecision(9) << l.mean_probability
        << '\t' << l.probabilities[0] << ',' << l.probabilities[1] << ',' << l.probabilities[2] << '\n';
  }
  return kOk;
}

struct ServeArgs {
  std::string bundle, storage, host = "0.0.0.0";
  int port = 0;
};

int cmd_serve(ServeArgs a, std::ostream& out, std::ostream& err) {
  if (a.bundle.empty()) a.bundle = env_or("DEEPWOUND_BUNDLE", "");
  if (a.storage.empty()) a.storage = env_or("DEEPWOUND_STORAGE", "deepwound.sqlite");
  if (a.port == 0) a.port = std::stoi(env_or("DEEPWOUND_PORT", "8080"));

  service::Store store(a.storage);
  service::Service svc(store);
  if (!a.bundle.empty()) {
    svc.set_bundle(std::make_shared<const ensemble::EnsembleBundle>(ensemble::load_ensemble(a.bundle)));
  } else {
    err << "serve: no bundle given; /assess and /health answer 503\n";
  }
  httplib::Server server;
  svc.register_routes(server);
  server.set_logger([&err](const httplib::Request& req, const httplib::Response& res) {
    err << req.method << ' ' << req.path << ' ' << res.status << '\n';
  });
  if (!server.bind_to_port(a.host, a.port)) {
    err << "error: cannot listen on " << a.host << ':' << a.port << '\n';
    return kDataError;
  }
  out << "listening on " << a.host << ':' << a.port << std::endl;
  server.listen_after_bind();
  return kOk;
}

}  // namespace

std::optional<int> preprocessed_side(const std::string& manifest_path) {
  const auto marker = fs::path(manifest_path).parent_path() / kPreprocessMarker;
  std::ifstream in(marker);
  if (!in) return std::nullopt;
  try {
    return json::parse(in).at("input_side").get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kManifestParseError, marker.string() + ": " + e.what());
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Wound image assessment: data preparation, training, ensembling, evaluation and serving"};
  app.name("deepwound");
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Write resized, CLAHE-processed copies and a new manifest");
  c_pre->add_option("--manifest", pre.manifest, "Manifest CSV")->required();
  c_pre->add_option("--out", pre.out, "Output directory")->required();
  c_pre->add_option("--input-size", pre.input_size, "Side length in pixels")->capture_default_str();

  TrainArgs tr;
  int input_size = 0;
  auto* c_train = app.add_subcommand("train", "Fine-tune WoundNet variants");
  c_train->add_option("--manifest", tr.manifest, "Manifest CSV")->required();
  c_train->add_option("--variant", tr.variant, "A, B, C or all")->required();
  c_train->add_option("--out", tr.out, "Output directory")->required();
  c_train->add_option("--seed", tr.seed, "Split, augmentation and initialisation seed")->capture_default_str();
  c_train->add_option("--ratio", tr.ratio, "Training fraction")->capture_default_str();
  c_train->add_option("--input-size", input_size, "Network input side (default 224, or the preprocessed size)");
  c_train->add_option("--epochs1", tr.epochs1, "Adam phase epochs")->capture_default_str();
  c_train->add_option("--epochs2", tr.epochs2, "SGD phase epochs")->capture_default_str();
  c_train->add_option("--batch-size", tr.batch_size, "Batch size")->capture_default_str();
  c_train->add_option("--backbone", tr.backbone,
                      "vgg16-backbone archive, or 'random' for a seeded random backbone "
                      "(default: $DEEPWOUND_BACKBONE)");
  c_train->add_flag("--no-augment", tr.no_augment, "Disable online augmentation");

  EnsembleArgs en;
  auto* c_ens = app.add_subcommand("ensemble", "Assemble A.dwm, B.dwm and C.dwm into an ensemble bundle");
  c_ens->add_option("--models", en.models, "Directory holding A.dwm, B.dwm, C.dwm")->required();
  c_ens->add_option("--out", en.out, "Bundle directory")->required();
  c_ens->add_option("--version", en.version, "Version string stamped into the bundle")->required();
  c_ens->add_option("--threshold", en.threshold, "Per-member decision threshold")->capture_default_str();

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Per-label metrics and ROC curves on a labelled manifest");
  c_eval->add_option("--bundle", ev.bundle, "Ensemble bundle directory")->required();
  c_eval->add_option("--manifest", ev.manifest, "Manifest CSV")->required();
  c_eval->add_option("--out", ev.out, "Report directory")->required();
  c_eval->add_option("--saliency", ev.saliency, "Saliency maps for the first N samples");
  c_eval->add_option("--saliency-label", ev.saliency_label, "Label for saliency maps")->capture_default_str();

  PredictArgs pr;
  auto* c_pred = app.add_subcommand("predict", "Assess one image");
  c_pred->add_option("--bundle", pr.bundle, "Ensemble bundle directory")->required();
  c_pred->add_option("--image", pr.image, "JPEG or PNG file")->required();

  ServeArgs sv;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP service");
  c_serve->add_option("--bundle", sv.bundle, "Ensemble bundle directory (default: $DEEPWOUND_BUNDLE)");
  c_serve->add_option("--port", sv.port, "Port (default: $DEEPWOUND_PORT or 8080)");
  c_serve->add_option("--storage", sv.storage, "SQLite file (default: $DEEPWOUND_STORAGE or deepwound.sqlite)");
  c_serve->add_option("--host", sv.host, "Bind address")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*c_pre) return cmd_preprocess(pre, out, err);
    if (*c_train) {
      if (input_size > 0) tr.input_size = input_size;
      return cmd_train(tr, out, err);
    }
    if (*c_ens) return cmd_ensemble(en, out, err);
    if (*c_eval) return cmd_evaluate(ev, out, err);
    if (*c_pred) return cmd_predict(pr, out, err);
    if (*c_serve) return cmd_serve(sv, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return domain_of(e.code()) == ErrorDomain::kModel ? kModelError : kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace deepwound::cli
