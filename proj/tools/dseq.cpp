// dseq: command-line front end for the sequential netlist toolkit.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "deepseq/downstream.hpp"
#include "deepseq/finetune.hpp"
#include "deepseq/generate.hpp"
#include "deepseq/model.hpp"
#include "deepseq/netlist_io.hpp"
#include "deepseq/schedule.hpp"
#include "deepseq/simulate.hpp"
#include "deepseq/supervise.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace dseq;

namespace {

constexpr const char* kVersion = "0.1.0";

// Bad inputs (unreadable files, malformed content) as opposed to bad usage.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  unsigned workers = std::max(1U, std::thread::hardware_concurrency());
  bool json_logs = false;
};

class Log {
 public:
  explicit Log(const Globals& g) : json_(g.json_logs) {}

  void event(const std::string& name, const json& fields, const std::string& text) const {
    if (json_) {
      json j = {{"event", name}};
      for (const auto& [k, v] : fields.items()) j[k] = v;
      std::cerr << j.dump() << '\n';
    } else {
      std::cerr << text << '\n';
    }
  }
  void info(const std::string& text) const { event("info", {{"message", text}}, text); }

 private:
  bool json_;
};

std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string toml_value(const CLI::Option* o) {
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    return out + '"';
  };
  auto scalar = [&](const std::string& s) {
    if (s == "true" || s == "false") return s;
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    if (!s.empty() && end && *end == '\0') return s;
    return quote(s);
  };
  if (o->get_expected_max() == 0) return o->count() ? "true" : "false";
  const bool multi = o->get_expected_max() > 1;
  std::vector<std::string> vals;
  if (o->count()) {
    vals = o->results();
  } else if (multi) {
    return {};  // an empty list does not read back, so it is left out
  } else {
    vals = {o->get_default_str()};
  }
  if (!multi) return scalar(vals.empty() ? "" : vals.front());
  std::string out = "[";
  for (std::size_t i = 0; i < vals.size(); ++i) out += (i ? ", " : "") + quote(vals[i]);
  return out + "]";
}

// Effective configuration of the run in the same format --config reads.
std::string effective_config(const CLI::App& app, const CLI::App& sub) {
  std::string out;
  auto dump = [&](const CLI::App& a) {
    for (const CLI::Option* o : a.get_options()) {
      const auto name = o->get_single_name();
      // Workers and logging never change outputs, so they stay out of the hash.
      if (o->get_lnames().empty() || name == "help" || name == "config" || name == "version" ||
          name == "from-manifest" || name == "workers" || name == "json-logs") {
        continue;
      }
      const auto value = toml_value(o);
      if (!value.empty()) out += name + " = " + value + "\n";
    }
  };
  dump(app);
  out += "[" + sub.get_name() + "]\n";
  dump(sub);
  return out;
}

struct RunContext {
  const CLI::App* app = nullptr;
  const CLI::App* sub = nullptr;
  Globals* globals = nullptr;
};

void write_manifest(const RunContext& ctx, const fs::path& path, const json& outputs) {
  const std::string config = effective_config(*ctx.app, *ctx.sub);
  json m;
  m["tool"] = "dseq";
  m["version"] = kVersion;
  m["checkpoint_version"] = nn::kCheckpointVersion;
  m["command"] = ctx.sub->get_name();
  m["seed"] = ctx.globals->seed;
  m["config_hash"] = fnv1a_hex(config);
  m["config"] = config;
  m["outputs"] = outputs;
  write_text_file(path, m.dump(2) + "\n");
}

fs::path manifest_beside(const fs::path& output) {
  if (fs::is_directory(output)) return output / "manifest.json";
  return fs::path(output.string() + ".manifest.json");
}

void ensure_parent(const fs::path& path) {
  const auto parent = fs::absolute(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw DataError("input file not found: " + path);
}

std::vector<std::string> corpus_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("corpus directory not found: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".aag" || ext == ".bench")) out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Workload load_workload(const CircuitGraph& g, const std::string& path) {
  require_file(path);
  return Workload::from_json(g, read_text_file(path));
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenOpts {
  std::size_t n = 50;
  std::string out;
  double feedback = 0.5;
  std::size_t nodes = 0;
};

int run_gen(const GenOpts& o, const RunContext& ctx) {
  Log log(*ctx.globals);
  fs::create_directories(o.out);
  Rng rng(stream_key(ctx.globals->seed, 0x6e11));
  json index = json::array();
  for (std::size_t i = 0; i < o.n; ++i) {
    const GenSpec spec = o.nodes ? spec_for_size(o.nodes, rng.next(), o.feedback)
                                 : corpus_like_spec(rng, o.feedback);
    const auto gen = generate(spec);
    char name[32];
    std::snprintf(name, sizeof name, "circuit_%04zu.aag", i);
    write_text_file(fs::path(o.out) / name, emit_aiger(gen.graph));
    index.push_back({{"file", name}, {"nodes", gen.graph.size()}, {"summary", json::parse(gen.summary.to_json())}});
  }
  write_text_file(fs::path(o.out) / "corpus.json", index.dump(2) + "\n");
  write_manifest(ctx, fs::path(o.out) / "manifest.json", {{"corpus", "corpus.json"}, {"circuits", o.n}});
  log.event("gen_done", {{"circuits", o.n}, {"out", o.out}}, "wrote " + std::to_string(o.n) + " circuits to " + o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// sim
// ---------------------------------------------------------------------------

struct SimOpts {
  std::string circuit, workload, out, saif, traces, design = "top";
  std::size_t patterns = 1000, cycles = 100;
};

int run_sim(const SimOpts& o, const RunContext& ctx) {
  Log log(*ctx.globals);
  require_file(o.circuit);
  const auto g = load_circuit(o.circuit);
  require_valid(g);
  const Workload w = o.workload.empty() ? Workload::uniform(g) : load_workload(g, o.workload);
  SimConfig sc;
  sc.n_patterns = o.patterns;
  sc.n_cycles = o.cycles;
  sc.seed = ctx.globals->seed;
  sc.workers = ctx.globals->workers;
  const auto stats = simulate(g, w, sc);
  json outputs = json::object();
  if (o.out.empty()) {
    std::cout << stats.to_json(g) << '\n';
  } else {
    ensure_parent(o.out);
    write_text_file(o.out, stats.to_json(g) + "\n");
    outputs["stats"] = o.out;
  }
  if (!o.saif.empty()) {
    const auto exp = export_saif(g, stats.p1, stats.ptr, o.patterns * o.cycles, o.design);
    ensure_parent(o.saif);
    write_text_file(o.saif, exp.text);
    if (!exp.warnings.empty()) {
      log.event("saif_names", {{"synthesized", exp.warnings.size()}},
                "warning: " + std::to_string(exp.warnings.size()) + " unnamed nodes written with synthesized names");
    }
    outputs["saif"] = o.saif;
  }
  if (!o.traces.empty()) {
    ensure_parent(o.traces);
    write_traces(o.traces, stats.traces);
    outputs["traces"] = o.traces;
  }
  const std::string first = !o.out.empty() ? o.out : !o.saif.empty() ? o.saif : o.traces;
  if (!first.empty()) write_manifest(ctx, manifest_beside(first), outputs);
  log.event("sim_done", {{"nodes", g.size()}, {"patterns", o.patterns}, {"cycles", o.cycles}},
            "simulated " + std::to_string(g.size()) + " nodes");
  return 0;
}

// ---------------------------------------------------------------------------
// label
// ---------------------------------------------------------------------------

struct LabelOpts {
  std::string corpus, out;
  std::vector<std::string> circuits;
  std::size_t workloads = 1, patterns = 1000, cycles = 100;
};

int run_label(const LabelOpts& o, const RunContext& ctx) {
  Log log(*ctx.globals);
  std::vector<std::string> files = o.circuits;
  if (!o.corpus.empty()) {
    const auto more = corpus_files(o.corpus);
    files.insert(files.end(), more.begin(), more.end());
  }
  if (files.empty()) throw CLI::ValidationError("label: give --corpus or --circuit");
  const fs::path out_dir = fs::absolute(o.out).parent_path();
  std::vector<DatasetRecord> records;
  for (std::size_t i = 0; i < files.size(); ++i) {
    require_file(files[i]);
    const auto g = load_circuit(files[i]);
    require_valid(g);
    for (std::size_t k = 0; k < o.workloads; ++k) {
      Rng rng(stream_key(ctx.globals->seed, i, k));
      DatasetRecord r;
      r.circuit_path = fs::relative(fs::absolute(files[i]), out_dir).generic_string();
      r.workload = Workload::random(g, rng);
      LabelConfig lc;
      lc.sim.n_patterns = o.patterns;
      lc.sim.n_cycles = o.cycles;
      lc.sim.seed = rng.next();
      lc.sim.workers = ctx.globals->workers;
      lc.seed = rng.next();
      LabelDiagnostics diag;
      r.labels = build_labelset(g, r.workload, lc, &diag);
      r.sim = lc.sim;
      r.sim.workers = 1;
      records.push_back(std::move(r));
      log.event("labelled",
                {{"circuit", files[i]}, {"workload", k}, {"rc", records.back().labels.rc.size()},
                 {"f", records.back().labels.f.size()}, {"ffsim", records.back().labels.ffsim.size()}},
                "labelled " + files[i] + " workload " + std::to_string(k));
    }
  }
  ensure_parent(o.out);
  write_dataset(o.out, records);
  write_manifest(ctx, manifest_beside(o.out), {{"dataset", o.out}, {"records", records.size()}});
  return 0;
}

// ---------------------------------------------------------------------------
// train / eval
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string dataset, out, history, init;
  std::size_t dim = 128, mlp_hidden = 128;
  bool reverse_layer = true;
  double cycle_tol = 1e-3;
  int cycle_max_iters = 3;
  std::size_t batch_size = 16, epochs_phase1 = 40, epochs_phase2 = 40;
  double lr = 1e-4;
  double w_rc = 1, w_lg = 1, w_tr = 1, w_f = 1, w_ffsim = 1;
};

std::vector<nn::Sample> dataset_samples(const std::string& path) {
  require_file(path);
  const auto records = read_dataset(path);
  if (records.empty()) throw DataError(path + ": dataset is empty");
  return nn::load_samples(records, fs::absolute(path).parent_path());
}

nn::Model load_model(const std::string& path) {
  require_file(path);
  return nn::Model::load(path);
}

int run_train(const TrainOpts& o, const RunContext& ctx) {
  Log log(*ctx.globals);
  const auto data = dataset_samples(o.dataset);
  nn::ModelConfig mc;
  mc.dim = o.dim;
  mc.mlp_hidden = o.mlp_hidden;
  mc.reverse_layer = o.reverse_layer;
  mc.cycle_tol = o.cycle_tol;
  mc.cycle_max_iters = o.cycle_max_iters;
  mc.seed = ctx.globals->seed;
  nn::Model model = o.init.empty() ? nn::Model(mc) : load_model(o.init);
  nn::TrainConfig tc;
  tc.batch_size = o.batch_size;
  tc.epochs_phase1 = o.epochs_phase1;
  tc.epochs_phase2 = o.epochs_phase2;
  tc.lr = o.lr;
  tc.weights = {o.w_rc, o.w_lg, o.w_tr, o.w_f, o.w_ffsim};
  tc.seed = ctx.globals->seed;
  const std::string history = o.history.empty() ? o.out + ".history.jsonl" : o.history;
  ensure_parent(history);
  std::ofstream hist(history);
  if (!hist) throw DataError("cannot write " + history);
  nn::train(data, model, tc, [&](const nn::EpochRecord& r) {
    const auto j = r.to_json();
    hist << j.dump() << '\n';
    log.event("epoch", j,
              "epoch " + std::to_string(r.epoch) + " phase " + std::to_string(r.phase) + " loss " +
                  std::to_string(r.total) + " lg " + std::to_string(r.avg_pe.lg) + " tr " +
                  std::to_string(r.avg_pe.tr));
  });
  model.save(o.out, {{"train", tc.to_json()}});
  write_manifest(ctx, manifest_beside(o.out), {{"checkpoint", o.out}, {"history", history}});
  return 0;
}

struct EvalOpts {
  std::string model, dataset, out;
};

int run_eval(const EvalOpts& o, const RunContext& ctx) {
  Log log(*ctx.globals);
  const auto model = load_model(o.model);
  const auto data = dataset_samples(o.dataset);
  const auto report = nn::evaluate(model, data);
  const std::string text = report.to_json().dump(2) + "\n";
  if (o.out.empty()) {
    std::cout << text;
  } else {
    ensure_parent(o.out);
    write_text_file(o.out, text);
    write_manifest(ctx, manifest_beside(o.out), {{"report", o.out}});
  }
  log.event("eval_done", {{"avg_pe", report.pooled.to_json()}}, "avg PE " + report.pooled.to_json().dump());
  return 0;
}

// ---------------------------------------------------------------------------
// power
// ---------------------------------------------------------------------------

struct PowerOpts {
  std::string model, circuit, out, out_model, saif;
  std::size_t train_workloads = 100, heldout = 5, epochs = 20, batch_size = 4;
  std::size_t patterns = 1000, cycles = 100;
  double lr = 1e-4, capacitance = 1, vdd = 1, frequency = 1;
};

int run_power(const PowerOpts& o, const RunContext& ctx) {
  Log log(*ctx.globals);
  require_file(o.circuit);
  auto g = std::make_shared<const CircuitGraph>(load_circuit(o.circuit));
  require_valid(*g);
  auto plan = std::make_shared<const PropagationPlan>(levelize(*g));
  nn::Model model = load_model(o.model);
  PowerConfig pc{o.capacitance, o.vdd, o.frequency};
  const auto mask = power_mask(*g);

  Rng rng(stream_key(ctx.globals->seed, 0x90e7));
  auto make_cases = [&](std::size_t n, std::uint64_t tag) {
    std::vector<nn::WorkloadCase> cases;
    for (std::size_t i = 0; i < n; ++i) {
      nn::WorkloadCase c;
      c.workload = Workload::random(*g, rng);
      SimConfig sc;
      sc.n_patterns = o.patterns;
      sc.n_cycles = o.cycles;
      sc.seed = stream_key(ctx.globals->seed, tag, i);
      sc.workers = ctx.globals->workers;
      c.stats = simulate(*g, c.workload, sc);
      cases.push_back(std::move(c));
    }
    return cases;
  };
  const auto train_cases = make_cases(o.train_workloads, 1);
  const auto held_cases = make_cases(o.heldout, 2);

  if (o.epochs > 0 && !train_cases.empty()) {
    nn::FinetuneConfig fc{o.epochs, o.batch_size, o.lr, ctx.globals->seed};
    nn::finetune_workloads(model, g, plan, train_cases, fc, [&](const nn::EpochRecord& r) {
      log.event("finetune_epoch", r.to_json(), "fine-tune epoch " + std::to_string(r.epoch) + " tr PE " + std::to_string(r.avg_pe.tr));
    });
  }
  auto report_cases = [&](const std::vector<nn::WorkloadCase>& cases, double& mean_err) {
    json arr = json::array();
    mean_err = 0;
    for (const auto& c : cases) {
      const auto e = nn::evaluate_power(model, *g, *plan, c, pc, mask);
      arr.push_back({{"predicted", e.predicted}, {"ground_truth", e.ground_truth},
                     {"rel_error", e.rel_error}, {"tr_avg_pe", e.tr_avg_pe}});
      mean_err += e.rel_error;
    }
    if (!cases.empty()) mean_err /= static_cast<double>(cases.size());
    return arr;
  };
  double train_err = 0, held_err = 0;
  json report;
  report["circuit"] = o.circuit;
  report["power_config"] = {{"capacitance", pc.capacitance}, {"vdd", pc.vdd}, {"frequency", pc.frequency}};
  report["train"] = report_cases(train_cases, train_err);
  report["heldout"] = report_cases(held_cases, held_err);
  report["train_mean_rel_error"] = train_err;
  report["heldout_mean_rel_error"] = held_err;

  json outputs = json::object();
  if (!o.saif.empty() && !held_cases.empty()) {
    const auto tr = nn::predict_transitions(model, *g, *plan, held_cases[0].workload);
    const auto& mc = model.config();
    const auto emb = nn::forward(*g, *plan, model, nn::init_embeddings(*g, held_cases[0].workload, mc.dim, mc.seed));
    const auto pred = nn::predict_heads(*g, emb, model, LabelSet{});
    std::vector<double> p1(g->size(), 0.0);
    for (std::size_t i = 0; i < g->pis().size(); ++i) {
      if (g->const_false() != g->pis()[i]) p1[g->pis()[i]] = held_cases[0].workload.pis[i].p1;
    }
    for (std::size_t k = 0; k < pred.nodes.size(); ++k) p1[pred.nodes[k]] = pred.lg.value().data[k];
    ensure_parent(o.saif);
    write_text_file(o.saif, export_saif(*g, p1, tr, o.patterns * o.cycles).text);
    outputs["saif"] = o.saif;
  }
  if (!o.out_model.empty()) {
    model.save(o.out_model);
    outputs["model"] = o.out_model;
  }
  const std::string text = report.dump(2) + "\n";
  if (o.out.empty()) {
    std::cout << text;
  } else {
    ensure_parent(o.out);
    write_text_file(o.out, text);
    outputs["report"] = o.out;
  }
  if (!outputs.empty()) write_manifest(ctx, manifest_beside(o.out.empty() ? outputs.begin()->get<std::string>() : o.out), outputs);
  log.event("power_done", {{"train_mean_rel_error", train_err}, {"heldout_mean_rel_error", held_err}},
            "power error train " + std::to_string(train_err) + " held-out " + std::to_string(held_err));
  return 0;
}

// ---------------------------------------------------------------------------
// reliab
// ---------------------------------------------------------------------------

struct ReliabOpts {
  std::vector<std::string> circuits;
  std::string labels_in, labels_out, model, out, report;
  std::size_t workloads = 1, patterns = 1000, cycles = 100, epochs = 50, batch_size = 4;
  double flip_prob = 0.0005, lr = 1e-4;
};

int run_reliab(const ReliabOpts& o, const RunContext& ctx) {
  Log log(*ctx.globals);
  std::vector<ReliabilityRecord> records;
  fs::path base = fs::current_path();
  if (!o.labels_in.empty()) {
    require_file(o.labels_in);
    records = read_reliability(o.labels_in);
    base = fs::absolute(o.labels_in).parent_path();
  } else {
    if (o.circuits.empty()) throw CLI::ValidationError("reliab: give --circuit or --labels-in");
    const fs::path out_dir = o.labels_out.empty() ? base : fs::absolute(o.labels_out).parent_path();
    for (std::size_t i = 0; i < o.circuits.size(); ++i) {
      require_file(o.circuits[i]);
      const auto g = load_circuit(o.circuits[i]);
      for (std::size_t k = 0; k < o.workloads; ++k) {
        Rng rng(stream_key(stream_key(ctx.globals->seed, 0x4e1), i, k));
        ReliabilityRecord r;
        r.circuit_path = fs::relative(fs::absolute(o.circuits[i]), out_dir).generic_string();
        r.workload = Workload::random(g, rng);
        FaultConfig fc;
        fc.flip_prob = o.flip_prob;
        fc.n_patterns = o.patterns;
        fc.n_cycles = o.cycles;
        fc.seed = rng.next();
        fc.workers = ctx.globals->workers;
        r.flip_prob = o.flip_prob;
        r.sim = {o.patterns, o.cycles, fc.seed, 1};
        r.labels = reliability_labels(g, r.workload, fc);
        records.push_back(std::move(r));
        log.event("flip_labels", {{"circuit", o.circuits[i]}, {"workload", k}},
                  "fault-simulated " + o.circuits[i] + " workload " + std::to_string(k));
      }
    }
    base = out_dir;
  }
  json outputs = json::object();
  if (!o.labels_out.empty()) {
    ensure_parent(o.labels_out);
    write_reliability(o.labels_out, records);
    outputs["labels"] = o.labels_out;
  }
  if (!o.model.empty()) {
    if (o.out.empty()) throw CLI::ValidationError("reliab: --model needs --out");
    nn::Model model = load_model(o.model);
    std::vector<nn::ReliabilitySample> data;
    std::map<std::string, std::pair<std::shared_ptr<const CircuitGraph>, std::shared_ptr<const PropagationPlan>>> cache;
    for (const auto& r : records) {
      auto it = cache.find(r.circuit_path);
      if (it == cache.end()) {
        fs::path p = r.circuit_path;
        if (p.is_relative()) p = base / p;
        require_file(p.string());
        auto g = std::make_shared<const CircuitGraph>(load_circuit(p));
        auto plan = std::make_shared<const PropagationPlan>(levelize(*g));
        it = cache.emplace(r.circuit_path, std::make_pair(g, plan)).first;
      }
      if (r.labels.p01.size() != it->second.first->size()) {
        throw DataError("flip labels for " + r.circuit_path + " do not match its node count");
      }
      data.push_back({r.circuit_path, it->second.first, it->second.second, r.workload, r.labels});
    }
    nn::FinetuneConfig fc{o.epochs, o.batch_size, o.lr, ctx.globals->seed};
    const auto history = nn::finetune_reliability(model, data, fc, [&](const nn::ReliabilityEpoch& e) {
      log.event("reliab_epoch", e.to_json(), "epoch " + std::to_string(e.epoch) + " L1 " + std::to_string(e.loss));
    });
    model.save(o.out);
    outputs["model"] = o.out;
    const double pe = nn::reliability_avg_pe(model, data);
    json report = {{"avg_pe", pe}, {"epochs", history.size()}};
    if (!o.report.empty()) {
      ensure_parent(o.report);
      write_text_file(o.report, report.dump(2) + "\n");
      outputs["report"] = o.report;
    } else {
      std::cout << report.dump(2) << '\n';
    }
  }
  if (!outputs.empty()) {
    const std::string first = !o.labels_out.empty() ? o.labels_out : o.out;
    write_manifest(ctx, manifest_beside(first), outputs);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

struct InspectOpts {
  std::string circuit, what = "summary", out;
};

int run_inspect(const InspectOpts& o, const RunContext&) {
  require_file(o.circuit);
  const auto g = load_circuit(o.circuit);
  std::string text;
  if (o.what == "validate") {
    json arr = json::array();
    for (const auto& v : validate(g)) arr.push_back({{"node", v.node}, {"rule", v.rule}});
    text = json({{"violations", arr}}).dump(2);
  } else if (o.what == "aiger") {
    text = emit_aiger(g);
  } else if (o.what == "graph") {
    json nodes = json::array();
    for (NodeId v = 0; v < g.size(); ++v) {
      json n = {{"id", v}, {"kind", std::string(to_string(g.kind(v)))}};
      n["fanins"] = std::vector<NodeId>(g.fanins(v).begin(), g.fanins(v).end());
      if (g.has_name(v)) n["name"] = g.name(v);
      nodes.push_back(n);
    }
    text = json({{"nodes", nodes}, {"pos", g.pos()}}).dump(2);
  } else {
    require_valid(g);
    const auto plan = levelize(g);
    if (o.what == "plan") {
      text = json::parse(plan.to_json()).dump(2);
    } else {
      json s = {{"nodes", g.size()},
                {"pi", g.count(NodeKind::PI)},
                {"and", g.count(NodeKind::AND)},
                {"not", g.count(NodeKind::NOT)},
                {"ff", g.count(NodeKind::FF)},
                {"po", g.pos().size()},
                {"levels", plan.levels.size()},
                {"cyclic_regions", plan.cyclic_regions.size()}};
      text = s.dump(2);
    }
  }
  if (o.out.empty()) {
    std::cout << text << '\n';
  } else {
    ensure_parent(o.out);
    write_text_file(o.out, text + "\n");
  }
  return 0;
}

// Turns `--from-manifest m.json` into `--config <tmp> <command>`.
std::vector<std::string> expand_manifest(std::vector<std::string> args) {
  for (std::size_t i = 1; i + 1 < args.size(); ++i) {
    if (args[i] != "--from-manifest") continue;
    const auto m = json::parse(read_text_file(args[i + 1]));
    const fs::path cfg = fs::temp_directory_path() /
                         ("dseq-manifest-" + m.at("config_hash").get<std::string>() + ".toml");
    write_text_file(cfg, m.at("config").get<std::string>());
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
    args.insert(args.begin() + 1, {"--config", cfg.string(), m.at("command").get<std::string>()});
    return args;
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  try {
    args = expand_manifest(args);
  } catch (const std::exception& e) {
    std::cerr << "error: cannot read manifest: " << e.what() << '\n';
    return 2;
  }

  CLI::App app{"Sequential netlist representation learning toolkit"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", std::string("dseq ") + kVersion + " (checkpoint format " +
                                        std::to_string(nn::kCheckpointVersion) + ")");
  const char* env_config = std::getenv("DSEQ_CONFIG");
  app.set_config("--config", env_config ? env_config : "", "Config file (TOML/INI); flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  Globals globals;
  std::string from_manifest;
  app.add_option("--seed", globals.seed, "Global seed");
  app.add_option("--workers", globals.workers, "Worker threads for simulation")->check(CLI::PositiveNumber);
  app.add_flag("--json-logs", globals.json_logs, "Stream progress as JSON lines on stderr");
  app.add_option("--from-manifest", from_manifest, "Re-run the command recorded in a manifest");

  GenOpts gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a random circuit corpus");
  gen_cmd->add_option("--n", gen.n, "Number of circuits");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--feedback", gen.feedback, "Probability that an FF closes a loop")->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--nodes", gen.nodes, "Fixed node count per circuit (0 = corpus-like sizes)");

  SimOpts sim;
  auto* sim_cmd = app.add_subcommand("sim", "Simulate a circuit under a workload");
  sim_cmd->add_option("--circuit,--aig", sim.circuit, "Circuit (.aag or .bench)")->required();
  sim_cmd->add_option("--workload", sim.workload, "Workload JSON (default p1 = ptr = 0.5)");
  sim_cmd->add_option("--patterns", sim.patterns)->check(CLI::PositiveNumber);
  sim_cmd->add_option("--cycles", sim.cycles)->check(CLI::Range(2, 1 << 30));
  sim_cmd->add_option("--out", sim.out, "Statistics JSON (default stdout)");
  sim_cmd->add_option("--saif", sim.saif, "Write a SAIF file");
  sim_cmd->add_option("--traces", sim.traces, "Write FF state traces");
  sim_cmd->add_option("--design", sim.design, "SAIF design name");

  LabelOpts label;
  auto* label_cmd = app.add_subcommand("label", "Build a labelled dataset");
  label_cmd->add_option("--corpus", label.corpus, "Directory of circuits");
  label_cmd->add_option("--circuit", label.circuits, "Circuit file (repeatable)");
  label_cmd->add_option("--workloads", label.workloads, "Random workloads per circuit")->check(CLI::PositiveNumber);
  label_cmd->add_option("--patterns", label.patterns)->check(CLI::PositiveNumber);
  label_cmd->add_option("--cycles", label.cycles)->check(CLI::Range(2, 1 << 30));
  label_cmd->add_option("--out", label.out, "Dataset (JSON lines)")->required();

  TrainOpts tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--dataset", tr.dataset)->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint")->required();
  train_cmd->add_option("--history", tr.history, "History JSON lines (default <out>.history.jsonl)");
  train_cmd->add_option("--init", tr.init, "Continue from a checkpoint");
  train_cmd->add_option("--dim", tr.dim)->check(CLI::PositiveNumber);
  train_cmd->add_option("--mlp-hidden", tr.mlp_hidden)->check(CLI::PositiveNumber);
  train_cmd->add_option("--reverse-layer", tr.reverse_layer);
  train_cmd->add_option("--cycle-tol", tr.cycle_tol)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--cycle-max-iters", tr.cycle_max_iters)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--batch-size", tr.batch_size)->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs-phase1", tr.epochs_phase1);
  train_cmd->add_option("--epochs-phase2", tr.epochs_phase2);
  train_cmd->add_option("--lr", tr.lr)->check(CLI::PositiveNumber);
  train_cmd->add_option("--w-rc", tr.w_rc)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--w-lg", tr.w_lg)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--w-tr", tr.w_tr)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--w-f", tr.w_f)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--w-ffsim", tr.w_ffsim)->check(CLI::NonNegativeNumber);

  EvalOpts ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a dataset");
  eval_cmd->add_option("--model", ev.model)->required();
  eval_cmd->add_option("--dataset", ev.dataset)->required();
  eval_cmd->add_option("--out", ev.out, "Report JSON (default stdout)");

  PowerOpts pw;
  auto* power_cmd = app.add_subcommand("power", "Workload fine-tuning and power estimation");
  power_cmd->add_option("--model", pw.model)->required();
  power_cmd->add_option("--circuit", pw.circuit)->required();
  power_cmd->add_option("--train-workloads", pw.train_workloads);
  power_cmd->add_option("--heldout", pw.heldout);
  power_cmd->add_option("--epochs", pw.epochs, "Fine-tuning epochs (0 = none)");
  power_cmd->add_option("--batch-size", pw.batch_size)->check(CLI::PositiveNumber);
  power_cmd->add_option("--lr", pw.lr)->check(CLI::PositiveNumber);
  power_cmd->add_option("--patterns", pw.patterns)->check(CLI::PositiveNumber);
  power_cmd->add_option("--cycles", pw.cycles)->check(CLI::Range(2, 1 << 30));
  power_cmd->add_option("--capacitance", pw.capacitance)->check(CLI::PositiveNumber);
  power_cmd->add_option("--vdd", pw.vdd)->check(CLI::PositiveNumber);
  power_cmd->add_option("--frequency", pw.frequency)->check(CLI::PositiveNumber);
  power_cmd->add_option("--out", pw.out, "Report JSON (default stdout)");
  power_cmd->add_option("--out-model", pw.out_model, "Save the fine-tuned checkpoint");
  power_cmd->add_option("--saif", pw.saif, "Predicted SAIF for the first held-out workload");

  ReliabOpts rl;
  auto* reliab_cmd = app.add_subcommand("reliab", "Fault-injection labels and reliability fine-tuning");
  reliab_cmd->add_option("--circuit", rl.circuits, "Circuit file (repeatable)");
  reliab_cmd->add_option("--labels-in", rl.labels_in, "Existing flip labels (JSON lines)");
  reliab_cmd->add_option("--labels-out", rl.labels_out, "Write flip labels (JSON lines)");
  reliab_cmd->add_option("--workloads", rl.workloads)->check(CLI::PositiveNumber);
  reliab_cmd->add_option("--flip-prob", rl.flip_prob)->check(CLI::Range(0.0, 0.999999));
  reliab_cmd->add_option("--patterns", rl.patterns)->check(CLI::PositiveNumber);
  reliab_cmd->add_option("--cycles", rl.cycles)->check(CLI::Range(2, 1 << 30));
  reliab_cmd->add_option("--model", rl.model, "Pre-trained checkpoint to fine-tune");
  reliab_cmd->add_option("--out", rl.out, "Fine-tuned checkpoint");
  reliab_cmd->add_option("--epochs", rl.epochs);
  reliab_cmd->add_option("--batch-size", rl.batch_size)->check(CLI::PositiveNumber);
  reliab_cmd->add_option("--lr", rl.lr)->check(CLI::PositiveNumber);
  reliab_cmd->add_option("--report", rl.report, "Report JSON (default stdout)");

  InspectOpts in;
  auto* inspect_cmd = app.add_subcommand("inspect", "Dump graph, plan or validation results");
  inspect_cmd->add_option("--circuit", in.circuit)->required();
  inspect_cmd->add_option("--what", in.what)->check(CLI::IsMember({"summary", "graph", "plan", "validate", "aiger"}));
  inspect_cmd->add_option("--out", in.out);

  std::vector<const char*> cargs;
  for (const auto& a : args) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen_cmd) return run_gen(gen, {&app, gen_cmd, &globals});
    if (*sim_cmd) return run_sim(sim, {&app, sim_cmd, &globals});
    if (*label_cmd) return run_label(label, {&app, label_cmd, &globals});
    if (*train_cmd) return run_train(tr, {&app, train_cmd, &globals});
    if (*eval_cmd) return run_eval(ev, {&app, eval_cmd, &globals});
    if (*power_cmd) return run_power(pw, {&app, power_cmd, &globals});
    if (*reliab_cmd) return run_reliab(rl, {&app, reliab_cmd, &globals});
    if (*inspect_cmd) return run_inspect(in, {&app, inspect_cmd, &globals});
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << '\n' << app.help();
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
