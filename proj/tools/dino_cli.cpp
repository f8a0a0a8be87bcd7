// dino: data generation, training, evaluation and attention export.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dino/bytes.hpp"
#include "dino/checkpoint.hpp"
#include "dino/config.hpp"
#include "dino/data.hpp"
#include "dino/eval.hpp"
#include "dino/trainer.hpp"

namespace {

using namespace dino;
using json = nlohmann::json;

// Usage-class failures exit with 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void report(const std::string& metric, double value, const json& config) {
  std::cout << json{{"metric", metric}, {"value", value}, {"config", config}}.dump() << std::endl;
}

RunConfig with_overrides(RunConfig c, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return c;
}

struct Loaded {
  RunConfig config;
  Checkpoint<float> ckpt;
  const ParamSet<float>& params(bool student) const { return student ? ckpt.student : ckpt.teacher; }
};

Loaded load(const std::string& path) {
  Loaded l;
  l.ckpt = load_checkpoint<float>(path);
  l.config = parse_config(l.ckpt.config_text);
  return l;
}

std::vector<std::vector<std::size_t>> read_relevance(const std::string& spec, const data::Dataset& bank,
                                                     const data::Dataset& queries) {
  std::vector<std::vector<std::size_t>> rel(queries.size());
  if (spec == "labels") {
    for (std::size_t q = 0; q < queries.size(); ++q)
      for (std::size_t i = 0; i < bank.size(); ++i)
        if (bank.labels[i] == queries.labels[q]) rel[q].push_back(i);
    return rel;
  }
  std::ifstream in(spec);
  if (!in) throw IoError("cannot open relevance file " + spec);
  std::string line;
  std::size_t q = 0;
  while (std::getline(in, line)) {
    if (q >= rel.size()) throw FormatError("relevance file has more lines than queries", q);
    std::istringstream ss(line);
    std::size_t idx = 0;
    while (ss >> idx) {
      if (idx >= bank.size()) throw FormatError("relevance index " + std::to_string(idx) + " out of range", q);
      rel[q].push_back(idx);
    }
    ++q;
  }
  return rel;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale self-distillation toolkit"};
  app.require_subcommand(1);

  std::string spec_path, out_path;
  auto* gen = app.add_subcommand("gen-data", "generate the toy dataset (train.dsv, test.dsv)");
  gen->add_option("spec", spec_path, "key=value file with toy.* keys, or 'default'")->required();
  gen->add_option("out", out_path, "output directory")->required();

  std::string config_path, train_out, resume;
  std::vector<std::string> sets;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train a student/teacher pair");
  train->add_option("--config", config_path, "run configuration file")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--set", sets, "override key=value (repeatable)");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_flag("--quiet", quiet, "no per-step progress");

  auto* ev = app.add_subcommand("eval", "frozen-feature evaluation");
  ev->require_subcommand(1);
  std::string ckpt, train_set, test_set, bank_set, query_set, relevance;
  std::size_t k = 20, layers = 4, probe_epochs = 100;
  double tau = 0.07, probe_lr = 0.5;
  bool use_student = false;
  auto* knn = ev->add_subcommand("knn", "weighted k-NN accuracy");
  knn->add_option("--ckpt", ckpt)->required();
  knn->add_option("--train", train_set)->required();
  knn->add_option("--test", test_set)->required();
  knn->add_option("--k", k)->capture_default_str();
  knn->add_option("--tau", tau)->capture_default_str();
  knn->add_option("--layers", layers)->capture_default_str();
  knn->add_flag("--student", use_student, "evaluate the student instead of the teacher");
  auto* lin = ev->add_subcommand("linear", "linear probe accuracy");
  lin->add_option("--ckpt", ckpt)->required();
  lin->add_option("--train", train_set)->required();
  lin->add_option("--test", test_set)->required();
  lin->add_option("--layers", layers)->capture_default_str();
  lin->add_option("--epochs", probe_epochs)->capture_default_str();
  lin->add_option("--lr", probe_lr)->capture_default_str();
  lin->add_flag("--student", use_student);
  auto* ret = ev->add_subcommand("retrieval", "cosine retrieval mAP");
  ret->add_option("--ckpt", ckpt)->required();
  ret->add_option("--bank", bank_set)->required();
  ret->add_option("--queries", query_set)->required();
  ret->add_option("--relevance", relevance, "file of bank indices per query line, or 'labels'")->required();
  ret->add_option("--layers", layers)->capture_default_str();
  ret->add_flag("--student", use_student);

  std::string image_set, mask_out;
  std::size_t image_index = 0, layer = 0, head = 0;
  double mass = 0.6;
  bool layer_given = false;
  auto* attn = app.add_subcommand("attn", "export a CLS attention map as PGM");
  attn->add_option("--ckpt", ckpt)->required();
  attn->add_option("--image", image_set, "DSV dataset")->required();
  attn->add_option("--index", image_index, "image index in the dataset")->capture_default_str();
  attn->add_option("--layer", layer, "block index (default: last)")->each([&](const std::string&) { layer_given = true; });
  attn->add_option("--head", head)->capture_default_str();
  attn->add_option("--mass", mass)->capture_default_str();
  attn->add_option("--out", out_path, "attention map, P5 at patch-grid size")->required();
  attn->add_option("--mask-out", mask_out, "binary mass mask, P5");
  attn->add_flag("--student", use_student);

  std::string mode_name, csv_out;
  std::uint64_t demo_steps = 2000;
  auto* demo = app.add_subcommand("collapse-demo", "h/kl curves with centering or sharpening removed");
  demo->add_option("--mode", mode_name)->required()->check(CLI::IsMember({"no-center", "no-sharpen", "both"}));
  demo->add_option("--config", config_path, "base run configuration (default: built-in)");
  demo->add_option("--set", sets, "override key=value (repeatable)");
  demo->add_option("--steps", demo_steps)->capture_default_str();
  demo->add_option("--out", csv_out, "CSV path (default: stdout)");

  std::string dump_path;
  auto* dump = app.add_subcommand("ckpt-dump", "list the arrays of a checkpoint");
  dump->add_option("ckpt", dump_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: usage: " << msg << '\n';
    return 2;
  }

  try {
    if (*gen) {
      RunConfig c;
      if (spec_path != "default") c = load_config(spec_path);
      std::filesystem::create_directories(out_path);
      const auto tr = data::gen_toy(c.toy, data::Split::train);
      const auto te = data::gen_toy(c.toy, data::Split::test);
      data::save_dataset(tr, std::filesystem::path(out_path) / "train.dsv");
      data::save_dataset(te, std::filesystem::path(out_path) / "test.dsv");
      report("images", static_cast<double>(tr.size() + te.size()), {{"out", out_path}});
    } else if (*train) {
      RunConfig c = with_overrides(load_config(config_path), sets);
      c.out_dir = train_out;
      TrainOptions opt;
      opt.resume = resume;
      if (!quiet) {
        opt.on_step = [](const distill::StepMetrics& m) {
          if (m.step % 50 == 0) {
            std::fprintf(stderr, "step %llu loss %.4f h %.3f kl %.4f lr %.3g\n",
                         static_cast<unsigned long long>(m.step), m.loss, m.h, m.kl, m.lr);
          }
        };
        opt.on_eval = [](const EvalSnapshot& e) {
          std::fprintf(stderr, "eval step %llu teacher %.3f student %.3f\n", static_cast<unsigned long long>(e.step),
                       e.teacher_knn, e.student_knn);
        };
      }
      const auto r = run_training<float>(c, load_datasets(c), opt);
      report("final_step", static_cast<double>(r.final.step), {{"out", train_out}});
    } else if (*knn || *lin || *ret) {
      const Loaded l = load(ckpt);
      const auto& params = l.params(use_student);
      const json cfg{{"ckpt", ckpt}, {"layers", layers}, {"network", use_student ? "student" : "teacher"}};
      if (*ret) {
        const auto bank = data::load_dataset(bank_set);
        const auto queries = data::load_dataset(query_set);
        const auto rel = read_relevance(relevance, bank, queries);
        report("retrieval_map",
               eval::retrieval_map(eval::extract_features<float>(l.config.model, params, bank, layers),
                                   eval::extract_features<float>(l.config.model, params, queries, layers), rel),
               cfg);
      } else {
        const auto tr = data::load_dataset(train_set);
        const auto te = data::load_dataset(test_set);
        const auto ftr = eval::extract_features<float>(l.config.model, params, tr, layers);
        const auto fte = eval::extract_features<float>(l.config.model, params, te, layers);
        if (*knn) {
          json c2 = cfg;
          c2["k"] = k;
          c2["tau"] = tau;
          report("knn_accuracy", eval::knn_eval(ftr, fte, k, tau), c2);
        } else {
          eval::LinearProbeConfig pc;
          pc.epochs = probe_epochs;
          pc.lr = probe_lr;
          json c2 = cfg;
          c2["epochs"] = probe_epochs;
          c2["lr"] = probe_lr;
          report("linear_accuracy", eval::linear_probe(ftr, fte, pc), c2);
        }
      }
    } else if (*attn) {
      const Loaded l = load(ckpt);
      const auto& vc = l.config.model.vit;
      const auto ds = data::load_dataset(image_set);
      if (image_index >= ds.size()) throw ParameterError("--index beyond dataset size");
      if (!layer_given) layer = vc.depth - 1;
      if (layer >= vc.depth || head >= vc.heads) throw ParameterError("--layer/--head out of range");
      NoGradGuard no_grad;
      const auto out = vit::vit_forward(image_tensor<float>(ds.image(image_index)), vc, l.params(use_student), true);
      const std::size_t gh = vc.grid_for(ds.height), gw = vc.grid_for(ds.width);
      for (const auto& rec : out.attention) {
        if (rec.layer != layer || rec.head != head) continue;
        const auto row = eval::cls_patch_attention(rec.weights);
        const double peak = *std::max_element(row.begin(), row.end());
        std::vector<std::uint8_t> gray(row.size());
        for (std::size_t i = 0; i < row.size(); ++i) gray[i] = quantize_u8(static_cast<float>(peak > 0 ? row[i] / peak : 0));
        write_pgm(gw, gh, gray, out_path);
        const auto m = eval::attention_mask(row, gh, gw, mass);
        if (!mask_out.empty()) {
          std::vector<std::uint8_t> bin(m.mask.size());
          for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = m.mask[i] ? 255 : 0;
          write_pgm(gw, gh, bin, mask_out);
        }
        report("attn_kept_mass", m.kept_mass,
               {{"ckpt", ckpt}, {"index", image_index}, {"layer", layer}, {"head", head}, {"mass", mass}});
      }
    } else if (*demo) {
      RunConfig c;
      if (!config_path.empty()) c = load_config(config_path);
      c = with_overrides(c, sets);
      apply_collapse_mode(c, parse_collapse_mode(mode_name));
      const auto data = load_datasets(c);
      const std::uint64_t spe = (data.train.size() + c.batch_size - 1) / c.batch_size;
      c.epochs = static_cast<std::size_t>((demo_steps + spe - 1) / spe);
      c.stop_at_step = demo_steps;
      c.eval.every = 0;
      TrainOptions opt;
      opt.write_files = false;
      const auto r = run_training<float>(c, data, opt);
      std::ofstream file;
      if (!csv_out.empty()) {
        file.open(csv_out);
        if (!file) throw IoError("cannot open " + csv_out);
      }
      std::ostream& os = csv_out.empty() ? std::cout : file;
      os << "step,h,kl,ce,loss\n";
      char buf[160];
      for (const auto& m : r.metrics) {
        std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(m.step), m.h,
                      m.kl, m.ce, m.loss);
        os << buf;
      }
      if (!csv_out.empty()) report("final_h", r.metrics.back().h, {{"mode", mode_name}, {"steps", demo_steps}});
    } else if (*dump) {
      std::string text;
      for (const auto& a : list_checkpoint(bytes::read_file(dump_path), &text)) {
        std::string shape;
        for (std::size_t d : a.shape) shape += (shape.empty() ? "" : "x") + std::to_string(d);
        std::cout << a.name << '\t' << static_cast<int>(a.dtype) << '\t' << shape << '\n';
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  } catch (const dino::Error& e) {
    std::string kind = e.kind();
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << kind << ": " << msg << '\n';
    return (kind == "io" || kind == "format" || kind == "config") ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
