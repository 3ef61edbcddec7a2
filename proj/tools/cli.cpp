#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "msam/ciffp.hpp"
#include "msam/embio.hpp"
#include "msam/errors.hpp"
#include "msam/gradcheck_suite.hpp"
#include "msam/metrics.hpp"
#include "msam/model.hpp"
#include "msam/trainer.hpp"

namespace msam::cli {
namespace {

constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kTopKFrames = 3;

// Bad flag values detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v + 0.0);  // no "-0.0000"
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

class Result {
 public:
  void add(const std::string& key, const std::string& value) { lines_.push_back(key + "=" + value); }
  void add(const std::string& key, std::size_t value) { add(key, std::to_string(value)); }
  void add_report(const std::string& prefix, const RetrievalReport& r) {
    std::istringstream in(serialize(r));
    for (std::string line; std::getline(in, line);) lines_.push_back(prefix + line);
  }
  void write(std::ostream& out) const {
    out << "BEGIN RESULT\n";
    for (const auto& l : lines_) out << l << '\n';
    out << "END RESULT\n";
  }

 private:
  std::vector<std::string> lines_;
};

class Stopwatch {
 public:
  Stopwatch(bool verbose, std::ostream& err, std::string label)
      : verbose_(verbose), err_(err), label_(std::move(label)), start_(Clock::now()) {}
  ~Stopwatch() {
    if (verbose_) {
      const double s = std::chrono::duration<double>(Clock::now() - start_).count();
      err_ << "[time] " << label_ << ": " << fmt(s, 3) << " s\n";
    }
  }

 private:
  using Clock = std::chrono::steady_clock;
  bool verbose_;
  std::ostream& err_;
  std::string label_;
  Clock::time_point start_;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::size_t parse_count(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size() || v == 0 || s.front() == '-') {
    throw UsageError(what + " needs positive integers, got '" + s + "'");
  }
  return std::size_t(v);
}

// Config file: flat JSON object with TrainConfig keys.
TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw FormatError("config " + path + " must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "steps") c.steps = value.get<std::size_t>();
      else if (key == "base_lr") c.base_lr = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "k") c.k = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "eval_every") c.eval_every = value.get<std::size_t>();
      else if (key == "share_msalm") c.share_msalm = value.get<bool>();
      else throw FormatError("config " + path + ": unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config " + path + ": " + e.what());
  }
  return c;
}

// Training flags shared by train and ablate. Flags override the config file,
// which overrides defaults.
struct TrainFlags {
  std::string config;
  std::size_t steps = 0, k = 0;
  double lr = 0, wd = 0, lambda = 0;
  std::uint64_t seed = 0;
  CLI::Option *o_steps = nullptr, *o_k = nullptr, *o_lr = nullptr, *o_wd = nullptr,
              *o_lambda = nullptr, *o_seed = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON file with TrainConfig keys");
    o_steps = app->add_option("--steps", steps, "optimizer steps");
    o_lr = app->add_option("--lr", lr, "base learning rate");
    o_wd = app->add_option("--wd", wd, "decoupled weight decay");
    o_lambda = app->add_option("--lambda", lambda, "weight of the diversity term");
    o_k = app->add_option("--k", k, "probabilistic embeddings per sample");
    o_seed = app->add_option("--seed", seed, "random seed");
  }

  TrainConfig resolve() const {
    TrainConfig c = config.empty() ? TrainConfig{} : load_config(config);
    if (o_steps->count()) c.steps = steps;
    if (o_lr->count()) c.base_lr = lr;
    if (o_wd->count()) c.weight_decay = wd;
    if (o_lambda->count()) c.lambda = lambda;
    if (o_k->count()) c.k = k;
    if (o_seed->count()) c.seed = seed;
    try {
      c.validate();
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

struct SynthFlags {
  SynthSpec spec;
  CLI::Option *o_frames = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--videos", spec.num_videos, "number of videos");
    o_frames = app->add_option("--frames", spec.frames_per_video, "frames per video");
    app->add_option("--dim", spec.dim, "embedding width D");
    app->add_option("--captions", spec.captions_per_video, "captions per video");
    app->add_option("--noise", spec.cluster_noise, "cluster noise in [0, 1]");
    app->add_option("--seed", spec.seed, "random seed");
  }
};

std::string table_header() {
  std::ostringstream s;
  s << std::left << std::setw(14) << "method" << std::right;
  for (const char* dir : {"t2v", "v2t"}) {
    for (const char* m : {"R@1", "R@5", "R@10", "MdR", "MnR"}) {
      s << std::setw(9) << (std::string(dir) + " " + m).substr(0, 8);
    }
  }
  return s.str();
}

std::string table_row(const std::string& label, const RetrievalReport& t2v, const RetrievalReport& v2t) {
  std::ostringstream s;
  s << std::left << std::setw(14) << label << std::right;
  for (const auto* r : {&t2v, &v2t}) {
    s << std::setw(9) << fmt(100 * r->r_at.at(1), 1) << std::setw(9) << fmt(100 * r->r_at.at(5), 1)
      << std::setw(9) << fmt(100 * r->r_at.at(10), 1) << std::setw(9) << fmt(r->mdr, 1)
      << std::setw(9) << fmt(r->mnr, 2);
  }
  return s.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << text;
  if (!f) throw Error("failed to write " + path);
}

std::uint32_t checkpoint_crc(const ModelParams<float>& p) {
  return crc32(encode_checkpoint(p));
}

// --- verbs -----------------------------------------------------------------

int cmd_gen_synth(const SynthFlags& f, const std::string& out_path, std::ostream& out) {
  try {
    f.spec.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const EmbeddingBatch batch = gen_synthetic(f.spec);
  const auto bytes = encode_container(batch);
  std::ofstream file(out_path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("cannot open " + out_path + " for writing");
  file.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!file) throw Error("failed to write " + out_path);

  out << "wrote " << batch.videos.size() << " videos, " << batch.texts.size() << " texts (F="
      << f.spec.frames_per_video << ", D=" << f.spec.dim << ") to " << out_path << '\n';
  Result r;
  r.add("verb", "gen-synth");
  r.add("videos", batch.videos.size());
  r.add("texts", batch.texts.size());
  r.add("frames", f.spec.frames_per_video);
  r.add("dim", f.spec.dim);
  r.add("bytes", bytes.size());
  r.add("crc32", hex32(crc32(bytes)));
  r.write(out);
  return kOk;
}

int cmd_validate(const std::string& path, std::ostream& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<char> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const EmbeddingBatch batch = decode_container(std::as_bytes(std::span<const char>(raw)));
  std::set<std::size_t> frames, tokens;
  for (const auto& v : batch.videos) frames.insert(v.frames.dim(0));
  for (const auto& t : batch.texts) tokens.insert(t.tokens.dim(0));

  out << path << ": valid container, " << batch.videos.size() << " videos, " << batch.texts.size()
      << " texts, D=" << batch.dim << '\n';
  Result r;
  r.add("verb", "validate");
  r.add("status", "ok");
  r.add("videos", batch.videos.size());
  r.add("texts", batch.texts.size());
  r.add("dim", std::size_t(batch.dim));
  r.add("frames", frames.size() == 1 ? std::to_string(*frames.begin()) : "mixed");
  r.add("tokens", tokens.size() == 1 ? std::to_string(*tokens.begin()) : "mixed");
  r.add("bytes", raw.size());
  r.write(out);
  return kOk;
}

struct TrainOutcome {
  TrainResult<float> result;
  std::pair<RetrievalReport, RetrievalReport> reports;
};

TrainOutcome train_and_evaluate(const EmbeddingBatch& data, const TrainConfig& config, bool verbose,
                                std::ostream& err, const std::string& label) {
  Stopwatch sw(verbose, err, label);
  TrainResult<float> result = train<float>(data, config);
  auto reports = evaluate(data, result.params);
  return {std::move(result), std::move(reports)};
}

int cmd_train(const EmbeddingBatch& data, const TrainConfig& config, const std::string& ckpt_out,
              const std::string& report_path, bool verbose, std::ostream& out, std::ostream& err) {
  const TrainOutcome o = train_and_evaluate(data, config, verbose, err, "train");
  const auto& h = o.result.history;

  std::ostringstream text;
  text << std::setw(8) << "step" << std::setw(14) << "total" << std::setw(14) << "l_vtm"
       << std::setw(14) << "l_ddsl" << std::setw(14) << "l_dst" << std::setw(9) << "t2v R@1"
       << std::setw(9) << "v2t R@1" << '\n';
  for (const auto& e : h.evals) {
    const auto& l = h.steps[e.step - 1];
    text << std::setw(8) << e.step << std::setw(14) << fmt(l.total, 6) << std::setw(14)
         << fmt(l.l_vtm, 6) << std::setw(14) << fmt(l.l_ddsl, 6) << std::setw(14) << fmt(l.l_dst, 6)
         << std::setw(9) << fmt(e.t2v.r_at.at(1), 4) << std::setw(9) << fmt(e.v2t.r_at.at(1), 4)
         << '\n';
  }
  text << '\n' << table_header() << '\n' << table_row("ciffp", o.reports.first, o.reports.second) << '\n';

  Result r;
  r.add("verb", "train");
  r.add("steps", config.steps);
  r.add("k", config.k);
  r.add("first.total", fmt(h.steps.front().total, 6));
  r.add("final.total", fmt(h.steps.back().total, 6));
  r.add("final.l_vtm", fmt(h.steps.back().l_vtm, 6));
  r.add("final.l_ddsl", fmt(h.steps.back().l_ddsl, 6));
  r.add("final.l_dst", fmt(h.steps.back().l_dst, 6));
  r.add_report("t2v.", o.reports.first);
  r.add_report("v2t.", o.reports.second);
  r.add("checkpoint_crc32", hex32(checkpoint_crc(o.result.params)));
  if (!ckpt_out.empty()) {
    save_checkpoint(o.result.params, ckpt_out);
    r.add("checkpoint", ckpt_out);
  }
  std::ostringstream block;
  r.write(block);
  out << text.str() << block.str();
  if (!report_path.empty()) write_text(report_path, text.str() + block.str());
  return kOk;
}

ModelParams<float> params_for(const EmbeddingBatch& data, const std::string& ckpt, std::size_t k,
                              std::uint64_t seed) {
  if (ckpt.empty()) return init_params<float>(data.dim, k, seed);
  ModelParams<float> p = load_checkpoint(ckpt);
  if (p.dim() != data.dim) {
    throw ValidationError("checkpoint width " + std::to_string(p.dim()) + " differs from data width " +
                          std::to_string(data.dim));
  }
  return p;
}

int cmd_eval(const EmbeddingBatch& data, const ModelParams<float>& params,
             const std::string& report_path, bool verbose, std::ostream& out, std::ostream& err) {
  std::pair<RetrievalReport, RetrievalReport> reports;
  {
    Stopwatch sw(verbose, err, "eval");
    reports = evaluate(data, params);
  }
  std::ostringstream text;
  text << table_header() << '\n' << table_row("ciffp", reports.first, reports.second) << '\n';
  Result r;
  r.add("verb", "eval");
  r.add_report("t2v.", reports.first);
  r.add_report("v2t.", reports.second);
  r.write(text);
  out << text.str();
  if (!report_path.empty()) write_text(report_path, text.str());
  return kOk;
}

int cmd_score(const EmbeddingBatch& data, const ModelParams<float>& params,
              const std::string& out_path, std::ostream& out) {
  const Tensor<float> s = score_all(data, params);
  std::ostringstream matrix;
  for (std::size_t v = 0; v < s.dim(0); ++v) {
    for (std::size_t t = 0; t < s.dim(1); ++t) matrix << (t ? " " : "") << fmt(s.at({v, t}), 6);
    matrix << '\n';
  }
  if (out_path.empty()) {
    out << matrix.str();
  } else {
    write_text(out_path, matrix.str());
    out << "wrote " << s.dim(0) << " x " << s.dim(1) << " scores to " << out_path << '\n';
  }
  const auto values = s.data();
  double sum = 0;
  for (const float x : values) sum += x;
  Result r;
  r.add("verb", "score");
  r.add("videos", s.dim(0));
  r.add("texts", s.dim(1));
  r.add("min", fmt(*std::min_element(values.begin(), values.end()), 6));
  r.add("max", fmt(*std::max_element(values.begin(), values.end()), 6));
  r.add("mean", fmt(sum / double(values.size()), 6));
  r.write(out);
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, bool verbose, std::ostream& out, std::ostream& err) {
  GradCheckSetup setup;
  setup.seed = seed;
  std::vector<LossGradCheck> checks;
  {
    Stopwatch sw(verbose, err, "gradcheck");
    checks = run_loss_gradchecks(setup);
  }
  out << "gradient check: B=T=" << setup.batch << " F=" << setup.frames << " D=" << setup.dim
      << " k=" << setup.k << " step=" << sci(setup.step) << " float64\n";
  out << std::left << std::setw(8) << "loss" << std::right << std::setw(14) << "max_rel_err"
      << std::setw(14) << "max_norm_err" << "  worst parameter\n";
  Result r;
  r.add("verb", "gradcheck");
  r.add("seed", std::to_string(seed));
  r.add("tolerance", sci(kGradTolerance));
  bool ok = true;
  for (const auto& c : checks) {
    const auto worst = std::max_element(
        c.report.params.begin(), c.report.params.end(),
        [](const auto& a, const auto& b) { return a.max_rel_error < b.max_rel_error; });
    const double err_el = c.report.max_rel_error();
    out << std::left << std::setw(8) << c.loss << std::right << std::setw(14) << sci(err_el)
        << std::setw(14) << sci(c.report.max_norm_rel_error()) << "  " << worst->name << '['
        << worst->worst_index << "]\n";
    r.add(c.loss + ".max_rel_error", sci(err_el));
    r.add(c.loss + ".max_norm_rel_error", sci(c.report.max_norm_rel_error()));
    ok = ok && err_el <= kGradTolerance;
  }
  r.add("status", ok ? "pass" : "fail");
  r.write(out);
  return ok ? kOk : kCheckFailed;
}

std::vector<std::string> parse_pooling(const std::string& list) {
  static const std::vector<std::string> known{"mean", "topk", "selfattn", "ciffp"};
  std::vector<std::string> out;
  for (const auto& p : split(list, ',')) {
    if (std::find(known.begin(), known.end(), p) == known.end()) {
      throw UsageError("unknown pooling '" + p + "' (expected mean, topk, selfattn, ciffp)");
    }
    out.push_back(p);
  }
  if (out.empty()) throw UsageError("--pooling needs at least one method");
  return out;
}

Tensor<float> pool_scores(const std::string& method, const EmbeddingBatch& data,
                          const ModelParams<float>& params) {
  const auto videos = all_indices(data.videos.size());
  const auto texts = all_indices(data.texts.size());
  const Tensor<float> frames = stack_frames(data, videos);
  const Tensor<float> pooled = stack_text_pooled(data, texts);
  if (method == "mean") return mean_pool_similarity(frames, pooled);
  if (method == "topk") return topk_pool_similarity(frames, pooled, std::min(kTopKFrames, frames.dim(1)));
  if (method == "selfattn") return self_attention_pool_similarity(frames, pooled, Tensor<float>(Shape{data.dim}));
  return ciffp_scores(frames, pooled, params.ciffp);
}

std::string pool_label(const std::string& method) {
  if (method == "topk") return "top-k";
  if (method == "selfattn") return "self-attn";
  return method;
}

int cmd_ablate_pooling(const EmbeddingBatch& data, const ModelParams<float>& params,
                       const std::vector<std::string>& methods, const std::string& report_path,
                       bool verbose, std::ostream& out, std::ostream& err) {
  const auto gt = text_to_video_index(data);
  std::ostringstream table, blocks;
  table << table_header() << '\n';
  std::map<std::string, Tensor<float>> scores;
  for (const auto& m : methods) {
    Stopwatch sw(verbose, err, "ablate " + m);
    scores[m] = pool_scores(m, data, params);
    const RetrievalReport t2v = report(t2v_ranks(scores[m], gt), Direction::TextToVideo);
    const RetrievalReport v2t = report(v2t_ranks(scores[m], gt), Direction::VideoToText);
    table << table_row(pool_label(m), t2v, v2t) << '\n';
    Result r;
    r.add("verb", "ablate");
    r.add("pooling", m);
    r.add_report("t2v.", t2v);
    r.add_report("v2t.", v2t);
    r.write(blocks);
  }
  if (scores.count("mean") && scores.count("selfattn")) {
    double diff = 0;
    const auto a = scores["mean"].data(), b = scores["selfattn"].data();
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, double(std::abs(a[i] - b[i])));
    Result r;
    r.add("verb", "ablate");
    r.add("check", "selfattn_zero_projection_vs_mean");
    r.add("max_abs_diff", sci(diff));
    r.write(blocks);
  }
  out << table.str() << blocks.str();
  if (!report_path.empty()) write_text(report_path, table.str() + blocks.str());
  return kOk;
}

int cmd_ablate_sweep(const std::string& sweep, const std::optional<EmbeddingBatch>& data,
                     const SynthFlags& synth, const TrainConfig& base, const std::string& report_path,
                     bool verbose, std::ostream& out, std::ostream& err) {
  const auto eq = sweep.find('=');
  const std::string key = sweep.substr(0, eq);
  if (eq == std::string::npos || (key != "k" && key != "frames")) {
    throw UsageError("--sweep must be k=... or frames=..., got '" + sweep + "'");
  }
  std::vector<std::size_t> values;
  for (const auto& v : split(sweep.substr(eq + 1), ',')) values.push_back(parse_count(v, "--sweep"));
  if (values.empty()) throw UsageError("--sweep needs at least one value");
  if (key == "k" && !data) throw UsageError("--sweep k=... needs --data");
  if (key == "frames" && data) throw UsageError("--sweep frames=... generates its own data; drop --data");
  if (key == "frames" && synth.o_frames->count()) throw UsageError("--sweep frames=... conflicts with --frames");

  std::ostringstream table, blocks;
  table << table_header() << std::setw(14) << "final total" << '\n';
  for (const std::size_t v : values) {
    TrainConfig config = base;
    EmbeddingBatch generated;
    const EmbeddingBatch* batch = data ? &*data : nullptr;
    if (key == "k") {
      config.k = v;
    } else {
      SynthSpec spec = synth.spec;
      spec.frames_per_video = v;
      try {
        spec.validate();
      } catch (const ContractError& e) {
        throw UsageError(e.what());
      }
      generated = gen_synthetic(spec);
      batch = &generated;
    }
    const std::string label = key + "=" + std::to_string(v);
    const TrainOutcome o = train_and_evaluate(*batch, config, verbose, err, "sweep " + label);
    table << table_row(label, o.reports.first, o.reports.second) << std::setw(14)
          << fmt(o.result.history.steps.back().total, 6) << '\n';
    Result r;
    r.add("verb", "ablate");
    r.add("sweep", key);
    r.add("value", v);
    r.add("final.total", fmt(o.result.history.steps.back().total, 6));
    r.add_report("t2v.", o.reports.first);
    r.add_report("v2t.", o.reports.second);
    r.write(blocks);
  }
  out << table.str() << blocks.str();
  if (!report_path.empty()) write_text(report_path, table.str() + blocks.str());
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"msam: cross-modal pooling, probabilistic embeddings and retrieval tools", "msam"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("--verbose", verbose, "print timings to stderr");

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "write a seeded synthetic embedding container");
  SynthFlags gen_flags;
  gen_flags.attach(gen);
  std::string gen_out;
  gen->add_option("--out", gen_out, "container path")->required();

  // validate
  auto* val = app.add_subcommand("validate", "check a container");
  std::string val_path;
  val->add_option("path", val_path, "container path");
  val->add_option("--data", val_path, "container path");

  // train
  auto* tr = app.add_subcommand("train", "optimize model parameters on a container");
  TrainFlags tr_flags;
  tr_flags.attach(tr);
  std::string tr_data, tr_out, tr_report;
  tr->add_option("--data", tr_data, "container path")->required();
  tr->add_option("--out", tr_out, "checkpoint path");
  tr->add_option("--report", tr_report, "also write the report here");

  // eval
  auto* ev = app.add_subcommand("eval", "retrieval metrics with CIFFP scores");
  std::string ev_data, ev_ckpt, ev_report;
  std::size_t ev_k = TrainConfig{}.k;
  std::uint64_t ev_seed = 0;
  ev->add_option("--data", ev_data, "container path")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint (default: initial parameters)");
  ev->add_option("--k", ev_k, "k for initial parameters");
  ev->add_option("--seed", ev_seed, "seed for initial parameters");
  ev->add_option("--report", ev_report, "also write the report here");

  // score
  auto* sc = app.add_subcommand("score", "print the video x text similarity matrix");
  std::string sc_data, sc_ckpt, sc_out;
  std::uint64_t sc_seed = 0;
  sc->add_option("--data", sc_data, "container path")->required();
  sc->add_option("--ckpt", sc_ckpt, "checkpoint (default: initial parameters)");
  sc->add_option("--seed", sc_seed, "seed for initial parameters");
  sc->add_option("--out", sc_out, "write the matrix here instead of stdout");

  // ablate
  auto* ab = app.add_subcommand("ablate", "compare pooling methods or sweep k / frame count");
  TrainFlags ab_flags;
  ab_flags.attach(ab);
  SynthFlags ab_synth;
  ab_synth.o_frames = ab->add_option("--frames", ab_synth.spec.frames_per_video, "frames per video (frames sweep)");
  ab->add_option("--videos", ab_synth.spec.num_videos, "videos (frames sweep)");
  ab->add_option("--dim", ab_synth.spec.dim, "embedding width (frames sweep)");
  ab->add_option("--captions", ab_synth.spec.captions_per_video, "captions per video (frames sweep)");
  ab->add_option("--noise", ab_synth.spec.cluster_noise, "cluster noise (frames sweep)");
  std::string ab_data, ab_ckpt, ab_pooling = "mean,topk,selfattn,ciffp", ab_sweep, ab_out;
  ab->add_option("--data", ab_data, "container path");
  ab->add_option("--ckpt", ab_ckpt, "checkpoint for the ciffp row (default: initial parameters)");
  auto* ab_pool_opt = ab->add_option("--pooling", ab_pooling, "comma list of mean,topk,selfattn,ciffp");
  ab->add_option("--sweep", ab_sweep, "k=v1,v2,... or frames=v1,v2,...");
  ab->add_option("--out", ab_out, "also write the report here");
  ab->add_option("--report", ab_out, "alias of --out");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss (float64)");
  std::uint64_t gc_seed = 1;
  gc->add_option("--seed", gc_seed, "problem seed");

  for (auto* sub : {gen, val, tr, ev, sc, ab, gc}) {
    sub->add_flag("--verbose", verbose, "print timings to stderr");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(gen_flags, gen_out, out);
    if (val->parsed()) {
      if (val_path.empty()) throw UsageError("validate needs a container path");
      return cmd_validate(val_path, out);
    }
    if (tr->parsed()) {
      const TrainConfig config = tr_flags.resolve();
      return cmd_train(load_container(tr_data), config, tr_out, tr_report, verbose, out, err);
    }
    if (ev->parsed()) {
      if (ev_k == 0) throw UsageError("--k must be >= 1");
      const EmbeddingBatch data = load_container(ev_data);
      return cmd_eval(data, params_for(data, ev_ckpt, ev_k, ev_seed), ev_report, verbose, out, err);
    }
    if (sc->parsed()) {
      const EmbeddingBatch data = load_container(sc_data);
      return cmd_score(data, params_for(data, sc_ckpt, TrainConfig{}.k, sc_seed), sc_out, out);
    }
    if (ab->parsed()) {
      const TrainConfig config = ab_flags.resolve();
      if (!ab_sweep.empty()) {
        if (ab_pool_opt->count()) throw UsageError("--sweep and --pooling are exclusive");
        std::optional<EmbeddingBatch> data;
        if (!ab_data.empty()) data = load_container(ab_data);
        ab_synth.spec.seed = config.seed;
        return cmd_ablate_sweep(ab_sweep, data, ab_synth, config, ab_out, verbose, out, err);
      }
      if (ab_data.empty()) throw UsageError("ablate needs --data (or --sweep frames=...)");
      const auto methods = parse_pooling(ab_pooling);
      const EmbeddingBatch data = load_container(ab_data);
      return cmd_ablate_pooling(data, params_for(data, ab_ckpt, config.k, config.seed), methods,
                                ab_out, verbose, out, err);
    }
    if (gc->parsed()) return cmd_gradcheck(gc_seed, verbose, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace msam::cli
