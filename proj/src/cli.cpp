#include "xret/cli.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xret/data_io.hpp"
#include "xret/eval.hpp"
#include "xret/synthgen.hpp"
#include "xret/trainer.hpp"

namespace xret {

namespace {

namespace fs = std::filesystem;

// Thrown for flag combinations CLI11 cannot express; reported as a usage error.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TextInputs {
  std::vector<std::string> emb;
  std::vector<std::string> manifest;
};

void add_text_inputs(CLI::App* cmd, TextInputs& in, bool manifests_required) {
  cmd->add_option("--text-emb", in.emb, "Text embedding file (XEMB); repeatable")->required();
  auto* m = cmd->add_option("--text-manifest", in.manifest, "Manifest for each --text-emb, same order");
  if (manifests_required) m->required();
}

std::vector<LabeledSet> load_text_sets(const TextInputs& in) {
  std::vector<LabeledSet> sets;
  for (std::size_t i = 0; i < in.emb.size(); ++i) {
    LabeledSet s{read_embedding_file(in.emb[i]), {}};
    if (i < in.manifest.size()) s.manifest = read_manifest(in.manifest[i]);
    sets.push_back(std::move(s));
  }
  return sets;
}

void check_manifest_count(const TextInputs& in) {
  if (!in.manifest.empty() && in.manifest.size() != in.emb.size()) {
    throw UsageError("--text-manifest must be given once per --text-emb");
  }
}

// ------------------------------------------------------------ gen-synthetic

struct GenOptions {
  SynthConfig cfg;
  std::string out_dir;
};

void setup_gen(CLI::App& app, GenOptions& o, std::function<void()>& action, std::ostream& out) {
  auto* cmd = app.add_subcommand("gen-synthetic", "Write a synthetic multilingual text/image corpus");
  cmd->add_option("--n-items", o.cfg.n_items, "Training items")->capture_default_str();
  cmd->add_option("--n-holdout", o.cfg.n_holdout, "Held-out items written as a separate split")->capture_default_str();
  cmd->add_option("--latent-dim", o.cfg.latent_dim, "Latent dimension")->capture_default_str();
  cmd->add_option("--text-dim", o.cfg.text_dim, "Text embedding width")->capture_default_str();
  cmd->add_option("--image-dim", o.cfg.image_dim, "Image embedding width")->capture_default_str();
  cmd->add_option("--langs", o.cfg.languages, "Language codes")->delimiter(',')->capture_default_str();
  cmd->add_option("--gamma", o.cfg.gamma, "Per-language map perturbation scale")->capture_default_str();
  cmd->add_option("--sigma", o.cfg.sigma, "Additive noise scale")->capture_default_str();
  cmd->add_option("--seed", o.cfg.seed, "Generator seed")->capture_default_str();
  cmd->add_option("--out", o.out_dir, "Output directory")->required();
  cmd->callback([&] {
    action = [&] {
      o.cfg.validate();
      const SynthData data = generate(o.cfg);
      fs::create_directories(o.out_dir);
      const fs::path dir(o.out_dir);
      auto write_split = [&](const SynthSplit& split, const std::string& name) {
        write_embedding_file(split.images.embeddings, dir / (name + "_images.xemb"));
        write_manifest(split.images.manifest, dir / (name + "_images.jsonl"));
        for (std::size_t l = 0; l < split.texts.size(); ++l) {
          const auto stem = name + "_text_" + o.cfg.languages[l];
          write_embedding_file(split.texts[l].embeddings, dir / (stem + ".xemb"));
          write_manifest(split.texts[l].manifest, dir / (stem + ".jsonl"));
        }
      };
      write_split(data.train, "train");
      if (o.cfg.n_holdout > 0) write_split(data.holdout, "holdout");
      write_file_bytes(dir / "recipe.json", synth_config_to_json(o.cfg));
      out << "wrote " << o.cfg.n_items << " training items";
      if (o.cfg.n_holdout > 0) out << " and " << o.cfg.n_holdout << " held-out items";
      out << " in " << o.cfg.languages.size() << " language(s) to " << o.out_dir << "\n";
    };
  });
}

// ------------------------------------------------------------ train

struct TrainOptions {
  std::string text_emb, text_manifest, img_emb, img_manifest;
  std::string train_lang = "en";
  std::string loss = "m3l";
  TrainConfig train;
  std::vector<Index> dims{1024, 2048, 2048};
  std::vector<double> dropout{0.2, 0.1, 0.0};
  std::string checkpoint;
  std::string out;
  int checkpoint_every = 0;
  CLI::Option* rho = nullptr;
  CLI::Option* alpha1 = nullptr;
  CLI::Option* alpha2 = nullptr;
  CLI::Option* eta = nullptr;
};

void setup_train(CLI::App& app, TrainOptions& o, std::function<void()>& action, std::ostream& out) {
  auto* cmd = app.add_subcommand("train", "Train the projection head on text/image pairs");
  cmd->add_option("--text-emb", o.text_emb, "Text embedding file (XEMB)")->required();
  cmd->add_option("--text-manifest", o.text_manifest, "Text manifest (JSON lines)")->required();
  cmd->add_option("--img-emb", o.img_emb, "Image embedding file (XEMB)")->required();
  cmd->add_option("--img-manifest", o.img_manifest, "Image manifest (JSON lines)")->required();
  cmd->add_option("--train-lang", o.train_lang, "Train on this language only; 'all' keeps every pair")
      ->capture_default_str();
  cmd->add_option("--loss", o.loss, "Objective")->check(CLI::IsMember({"m3l", "patr"}))->capture_default_str();
  LossConfig& lc = o.train.loss;
  o.rho = cmd->add_option("--rho", lc.rho, "M3L sensitivity exponent")->capture_default_str();
  o.alpha1 = cmd->add_option("--alpha1", lc.alpha1, "M3L negative-image weight")->capture_default_str();
  o.alpha2 = cmd->add_option("--alpha2", lc.alpha2, "M3L negative-text weight")->capture_default_str();
  o.eta = cmd->add_option("--eta", lc.eta, "PATR margin")->capture_default_str();
  cmd->add_option("--denom-eps", lc.denom_eps, "M3L denominator epsilon")->capture_default_str();
  cmd->add_option("--epochs", o.train.epochs, "Epochs")->capture_default_str();
  cmd->add_option("--batch-size", o.train.batch_size, "Mini-batch size")->capture_default_str();
  cmd->add_option("--lr", o.train.adam.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--beta1", o.train.adam.beta1, "Adam beta1")->capture_default_str();
  cmd->add_option("--beta2", o.train.adam.beta2, "Adam beta2")->capture_default_str();
  cmd->add_option("--adam-eps", o.train.adam.eps, "Adam epsilon")->capture_default_str();
  cmd->add_option("--seed", o.train.seed, "Seed for init, shuffling and dropout")->capture_default_str();
  cmd->add_option("--dims", o.dims, "Block output dims")->delimiter(',')->capture_default_str();
  cmd->add_option("--dropout", o.dropout, "Dropout rate per block")->delimiter(',')->capture_default_str();
  cmd->add_flag("--normalize-inputs", o.train.normalize_inputs, "l2-normalize sentence embeddings first (default off)");
  cmd->add_option("--log-every", o.train.log_every, "Log every N batches")->capture_default_str();
  cmd->add_option("--checkpoint", o.checkpoint, "Output checkpoint path (XCKP)")->required();
  cmd->add_option("--checkpoint-every", o.checkpoint_every, "Also save <checkpoint>.epochN every N epochs (0 = off)")
      ->capture_default_str();
  cmd->add_option("--out", o.out, "Loss log CSV path");

  cmd->callback([&] {
    o.train.loss.kind = loss_kind_from_string(o.loss);
    if (o.train.loss.kind == LossKind::patr && (o.rho->count() || o.alpha1->count() || o.alpha2->count())) {
      throw UsageError("--rho/--alpha1/--alpha2 apply to --loss m3l only");
    }
    if (o.train.loss.kind == LossKind::m3l && o.eta->count()) {
      throw UsageError("--eta applies to --loss patr only");
    }
    if (o.checkpoint_every < 0) throw std::invalid_argument("--checkpoint-every must be >= 0");
    action = [&] {
      // Flags first; input_dim is a placeholder until the text file is read.
      ProjectionConfig config = ProjectionConfig::stacked(1, o.dims, o.dropout);
      config.validate();
      o.train.validate();

      EmbeddingSet texts = read_embedding_file(o.text_emb);
      const Manifest text_manifest = read_manifest(o.text_manifest);
      EmbeddingSet images = read_embedding_file(o.img_emb);
      const Manifest image_manifest = read_manifest(o.img_manifest);
      config.input_dim = texts.dim();
      std::optional<std::string> filter;
      if (o.train_lang != "all") filter = o.train_lang;
      const PairedDataset ds = join_pairs(std::move(texts), text_manifest, std::move(images), image_manifest, filter);

      EpochCallback on_epoch;
      if (o.checkpoint_every > 0) {
        on_epoch = [&](int epoch, const Checkpoint& ckpt) {
          if ((epoch + 1) % o.checkpoint_every == 0) {
            save_checkpoint(ckpt, o.checkpoint + ".epoch" + std::to_string(epoch + 1));
          }
        };
      }
      const TrainResult result = train(ds, config, o.train, on_epoch);
      save_checkpoint(result.checkpoint, o.checkpoint);
      if (!o.out.empty()) write_file_bytes(o.out, format_loss_log(result.log));

      out << "trained " << to_string(o.train.loss.kind) << " head on " << ds.pairs.size() << " pairs for "
          << o.train.epochs << " epoch(s)";
      if (!result.log.empty()) out << "; last logged loss " << result.log.back().loss;
      out << "\ncheckpoint " << o.checkpoint << " (" << checkpoint_fingerprint(result.checkpoint) << ")\n";
    };
  });
}

// ------------------------------------------------------------ eval

struct EvalOptions {
  std::string checkpoint;
  TextInputs texts;
  std::string img_emb, img_manifest;
  std::vector<Index> ks{1, 5, 10};
  std::string distance = "sqeuclidean";
  std::string out;
};

void setup_eval(CLI::App& app, EvalOptions& o, std::function<void()>& action, std::ostream& out) {
  auto* cmd = app.add_subcommand("eval", "Per-language Recall@K against an image gallery");
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint (XCKP)")->required();
  add_text_inputs(cmd, o.texts, true);
  cmd->add_option("--img-emb", o.img_emb, "Gallery embedding file (XEMB)")->required();
  cmd->add_option("--img-manifest", o.img_manifest, "Gallery manifest")->required();
  cmd->add_option("--k", o.ks, "Recall cutoffs")->delimiter(',')->capture_default_str();
  cmd->add_option("--distance", o.distance, "Ranking distance")
      ->check(CLI::IsMember({"sqeuclidean", "cosine"}))
      ->capture_default_str();
  cmd->add_option("--out", o.out, "Report prefix; writes <out>.json and <out>.csv");
  cmd->callback([&] {
    check_manifest_count(o.texts);
    for (const Index k : o.ks) {
      if (k < 1) throw std::invalid_argument("--k values must be >= 1");
    }
    action = [&] {
      const Checkpoint ckpt = load_checkpoint(o.checkpoint);
      const auto sets = load_text_sets(o.texts);
      const LabeledSet gallery{read_embedding_file(o.img_emb), read_manifest(o.img_manifest)};
      const RecallReport report = evaluate_zero_shot(ckpt, sets, gallery, o.ks, distance_from_string(o.distance));
      if (!o.out.empty()) {
        write_file_bytes(o.out + ".json", report_to_json(report));
        write_file_bytes(o.out + ".csv", report_to_csv(report));
      }
      out << report_to_table(report);
    };
  });
}

// ------------------------------------------------------------ diag

struct DiagOptions {
  TextInputs texts;
  std::string checkpoint;
  std::string out;
};

void setup_diag(CLI::App& app, DiagOptions& o, std::function<void()>& action, std::ostream& out) {
  auto* cmd = app.add_subcommand("diag", "Cross-lingual alignment ratio between row-paired text sets");
  add_text_inputs(cmd, o.texts, false);
  cmd->add_option("--checkpoint", o.checkpoint, "Project through this checkpoint first");
  cmd->add_option("--out", o.out, "Report prefix; writes <out>.json and <out>.csv");
  cmd->callback([&] {
    check_manifest_count(o.texts);
    if (o.texts.emb.size() < 2) throw UsageError("diag needs at least two --text-emb sets");
    action = [&] {
      auto sets = load_text_sets(o.texts);
      std::vector<std::string> labels;
      for (std::size_t i = 0; i < sets.size(); ++i) {
        labels.push_back(sets[i].manifest.empty() ? "set" + std::to_string(i) : sets[i].manifest.front().lang);
      }
      if (!o.checkpoint.empty()) {
        const Checkpoint ckpt = load_checkpoint(o.checkpoint);
        for (auto& s : sets) s.embeddings = project_texts(ckpt, s.embeddings);
      }
      std::vector<AlignmentEntry> entries;
      for (std::size_t i = 0; i < sets.size(); ++i) {
        for (std::size_t j = i + 1; j < sets.size(); ++j) {
          AlignmentEntry e = alignment_score(sets[i].embeddings.data, sets[j].embeddings.data);
          e.lang_a = labels[i];
          e.lang_b = labels[j];
          entries.push_back(e);
        }
      }
      if (!o.out.empty()) {
        write_file_bytes(o.out + ".json", alignment_to_json(entries));
        write_file_bytes(o.out + ".csv", alignment_to_csv(entries));
      }
      for (const auto& e : entries) {
        out << e.lang_a << " vs " << e.lang_b << ": paired " << e.paired_mean << ", mismatched "
            << e.mismatched_mean << ", ratio " << e.ratio << "\n";
      }
    };
  });
}

// ------------------------------------------------------------ export-proj

struct ExportOptions {
  std::string checkpoint;
  TextInputs texts;
  std::string out;
};

void setup_export(CLI::App& app, ExportOptions& o, std::function<void()>& action, std::ostream& out) {
  auto* cmd = app.add_subcommand("export-proj", "Write projected text coordinates as CSV");
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint (XCKP)")->required();
  add_text_inputs(cmd, o.texts, true);
  cmd->add_option("--out", o.out, "CSV path")->required();
  cmd->callback([&] {
    check_manifest_count(o.texts);
    action = [&] {
      const Checkpoint ckpt = load_checkpoint(o.checkpoint);
      const auto sets = load_text_sets(o.texts);
      export_projection_csv(ckpt, sets, o.out);
      std::size_t rows = 0;
      for (const auto& s : sets) rows += s.manifest.size();
      out << "wrote " << rows << " projected rows to " << o.out << "\n";
    };
  });
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-lingual text-to-image projection: training, retrieval evaluation, diagnostics", "xret"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::function<void()> action;
  GenOptions gen;
  TrainOptions tr;
  EvalOptions ev;
  DiagOptions dg;
  ExportOptions ex;
  setup_gen(app, gen, action, out);
  setup_train(app, tr, action, out);
  setup_eval(app, ev, action, out);
  setup_diag(app, dg, action, out);
  setup_export(app, ex, action, out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "invalid value: " << e.what() << "\n";
    return kExitData;
  }

  try {
    if (action) action();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace xret
