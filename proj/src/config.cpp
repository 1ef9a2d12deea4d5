#include <fstream>
#include <set>
#include <sstream>

#include "csrec/error.hpp"
#include "csrec/hashing.hpp"
#include "csrec/runner.hpp"

namespace csrec::runner {

const char* to_string(Method m) noexcept {
  switch (m) {
    case Method::Base: return "base";
    case Method::SoftRecPop: return "softrec_pop";
    case Method::CsrecM: return "csrec_m";
    case Method::CsrecD: return "csrec_d";
    case Method::CsrecT: return "csrec_t";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  for (Method m : {Method::Base, Method::SoftRecPop, Method::CsrecM, Method::CsrecD, Method::CsrecT})
    if (name == to_string(m)) return m;
  throw Error(ErrorKind::Usage, "unknown method '" + name +
                                    "' (expected base, softrec_pop, csrec_m, csrec_d, csrec_t)");
}

namespace {

// Reads known keys from one JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(ErrorKind::Usage, where_ + " must be a JSON object");
  }

  template <typename T>
  bool read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return false;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::Usage, where_ + "." + key + " has the wrong type");
    }
    return true;
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.contains(key)) throw Error(ErrorKind::Usage, "unknown config key '" + where_ + "." + key + "'");
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

Json world_json(const synthbench::WorldSpec& s) { return Json::parse(synthbench::spec_json(s)); }

Json model_json(const seqmodel::ModelConfig& m) {
  return {{"dim", m.dim},           {"dropout", m.dropout},       {"tie_weights", m.tie_weights},
          {"heads", m.heads},       {"gru_layers", m.gru_layers}};
}

Json train_json(const seqmodel::TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},       {"adam_eps", t.adam_eps},
          {"batch_size", t.batch_size},       {"max_epochs", t.max_epochs},
          {"early_stop_patience", t.early_stop_patience}, {"eval_batch_size", t.eval_batch_size}};
}

std::string hash_json(const std::string& tag, const Json& j) {
  return sha256_hex(tag + "\n" + j.dump());
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  ExperimentConfig c;
  ObjectReader top(j, "config");
  if (const Json* d = top.child("dataset")) {
    ObjectReader r(*d, "dataset");
    r.read("path", c.dataset.path);
    r.read("format", c.dataset.format);
    r.read("min_interactions", c.dataset.min_interactions);
    if (const Json* s = r.child("synth")) c.dataset.synth = synthbench::spec_from_json(s->dump());
    r.finish();
  } else {
    throw Error(ErrorKind::Usage, "config needs a dataset section");
  }
  top.read("max_len", c.max_len);
  top.read("expand_windows", c.expand_windows);
  std::string arch;
  if (top.read("architecture", arch)) c.model.architecture = seqmodel::architecture_from_string(arch);
  if (const Json* m = top.child("model")) {
    ObjectReader r(*m, "model");
    r.read("dim", c.model.dim);
    r.read("dropout", c.model.dropout);
    r.read("tie_weights", c.model.tie_weights);
    r.read("heads", c.model.heads);
    r.read("gru_layers", c.model.gru_layers);
    r.finish();
  }
  std::string method;
  if (top.read("method", method)) c.method = method_from_string(method);
  if (const Json* t = top.child("teacher")) {
    ObjectReader r(*t, "teacher");
    r.read("m", c.teacher.m);
    c.p_set = r.read("p", c.teacher.p);
    c.alpha_set = r.read("alpha", c.teacher.alpha);
    r.read("expectation_term", c.teacher.expectation_term);
    r.read("average_probabilities", c.teacher.average_probabilities);
    r.read("allow_duplicate_seeds", c.teacher.allow_duplicate_seeds);
    r.read("noise_dim", c.teacher.noise_dim);
    r.finish();
  }
  if (const Json* d = top.child("distill")) {
    ObjectReader r(*d, "distill");
    r.read("temperature", c.distill.temperature);
    r.read("beta", c.distill.beta);
    r.read("conventional_direction", c.distill.conventional_direction);
    r.finish();
  }
  if (const Json* t = top.child("train")) {
    ObjectReader r(*t, "train");
    r.read("learning_rate", c.train.learning_rate);
    r.read("adam_beta1", c.train.adam_beta1);
    r.read("adam_beta2", c.train.adam_beta2);
    r.read("adam_eps", c.train.adam_eps);
    r.read("batch_size", c.train.batch_size);
    r.read("max_epochs", c.train.max_epochs);
    r.read("early_stop_patience", c.train.early_stop_patience);
    r.read("eval_batch_size", c.train.eval_batch_size);
    r.finish();
  }
  top.read("cutoffs", c.cutoffs);
  top.read("delta", c.delta);
  top.read("mask_history", c.mask_history);
  top.read("popular_fraction", c.popular_fraction);
  top.read("seeds", c.seeds);
  top.read("output_dir", c.output_dir);
  top.read("threads", c.threads);
  top.read("resume", c.resume);
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Usage, "cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  Json j;
  try {
    j = Json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Usage, path + ": " + e.what());
  }
  return from_json(j);
}

Json ExperimentConfig::to_json() const {
  Json ds = {{"path", dataset.path}, {"format", dataset.format},
             {"min_interactions", dataset.min_interactions}};
  if (dataset.synth) ds["synth"] = world_json(*dataset.synth);
  Json t = {{"m", teacher.m},
            {"expectation_term", teacher.expectation_term},
            {"average_probabilities", teacher.average_probabilities},
            {"allow_duplicate_seeds", teacher.allow_duplicate_seeds},
            {"noise_dim", teacher.noise_dim}};
  if (p_set) t["p"] = teacher.p;
  if (alpha_set) t["alpha"] = teacher.alpha;
  return {{"dataset", ds},
          {"max_len", max_len},
          {"expand_windows", expand_windows},
          {"architecture", seqmodel::to_string(model.architecture)},
          {"model", model_json(model)},
          {"method", to_string(method)},
          {"teacher", t},
          {"distill",
           {{"temperature", distill.temperature},
            {"beta", distill.beta},
            {"conventional_direction", distill.conventional_direction}}},
          {"train", train_json(train)},
          {"cutoffs", cutoffs},
          {"delta", delta},
          {"mask_history", mask_history},
          {"popular_fraction", popular_fraction},
          {"seeds", seeds},
          {"output_dir", output_dir},
          {"threads", threads},
          {"resume", resume}};
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Usage, msg); };
  if (dataset.synth && !dataset.path.empty()) fail("dataset: give either path or synth, not both");
  if (!dataset.synth && dataset.path.empty()) fail("dataset: path or synth is required");
  if (dataset.format != "default" && dataset.format != "lastfm_tagged")
    fail("dataset.format must be 'default' or 'lastfm_tagged'");
  if (dataset.min_interactions < 1) fail("dataset.min_interactions must be >= 1");
  if (max_len < 1) fail("max_len must be >= 1");
  if (model.dim < 1) fail("model.dim must be >= 1");
  if (model.gru_layers < 1) fail("model.gru_layers must be >= 1");
  if (model.heads < 1 || model.dim % model.heads != 0) fail("model.heads must divide model.dim");
  if (model.dropout >= 1.0) fail("model.dropout must be < 1");
  if (seeds.empty()) fail("seeds must be nonempty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    fail("seeds must be distinct");
  if (cutoffs.empty()) fail("cutoffs must be nonempty");
  for (int n : cutoffs)
    if (n < 1) fail("cutoffs must be >= 1");
  if (!(popular_fraction > 0.0 && popular_fraction <= 1.0)) fail("popular_fraction must be in (0, 1]");
  if (threads < 1) fail("threads must be >= 1");
  if (output_dir.empty()) fail("output_dir must be nonempty");
  try {
    train.validate();
    if (method != Method::Base) distill.validate();
    switch (method) {
      case Method::CsrecD:
        if (!p_set) fail("method csrec_d requires teacher.p");
        [[fallthrough]];
      case Method::CsrecM:
        if (teacher.m < 1) fail("teacher.m must be >= 1");
        break;
      case Method::CsrecT:
        if (!p_set) fail("method csrec_t requires teacher.p");
        if (!alpha_set) fail("method csrec_t requires teacher.alpha");
        if (!(teacher.alpha >= 0.0 && teacher.alpha <= 1.0)) fail("teacher.alpha must be in [0, 1]");
        break;
      default:
        break;
    }
    if (p_set && !(teacher.p > 0.0 && teacher.p <= 1.0)) fail("teacher.p must be in (0, 1]");
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Usage) throw;
    throw Error(ErrorKind::Usage, e.what());
  }
}

std::string data_fingerprint(const ExperimentConfig& cfg) {
  Json j = {{"format", cfg.dataset.format},
            {"min_interactions", cfg.dataset.min_interactions},
            {"max_len", cfg.max_len},
            {"expand_windows", cfg.expand_windows},
            {"popular_fraction", cfg.popular_fraction}};
  if (cfg.dataset.synth)
    j["synth"] = world_json(*cfg.dataset.synth);
  else
    j["content_sha256"] = sha256_file(cfg.dataset.path);
  return hash_json("data", j);
}

std::string teacher_fingerprint(const ExperimentConfig& cfg) {
  Json j = {{"data", data_fingerprint(cfg)}, {"method", to_string(cfg.method)}};
  if (cfg.method == Method::Base) return hash_json("teacher", j);
  if (cfg.method != Method::SoftRecPop) {
    j["architecture"] = seqmodel::to_string(cfg.model.architecture);
    j["model"] = model_json(cfg.model);
    j["train"] = train_json(cfg.train);
  }
  switch (cfg.method) {
    case Method::CsrecM:
      j["m"] = cfg.teacher.m;
      j["average_probabilities"] = cfg.teacher.average_probabilities;
      j["allow_duplicate_seeds"] = cfg.teacher.allow_duplicate_seeds;
      break;
    case Method::CsrecD:
      j["m"] = cfg.teacher.m;
      j["p"] = cfg.teacher.p;
      j["average_probabilities"] = cfg.teacher.average_probabilities;
      j["allow_duplicate_seeds"] = cfg.teacher.allow_duplicate_seeds;
      break;
    case Method::CsrecT:
      j["p"] = cfg.teacher.p;
      j["alpha"] = cfg.teacher.alpha;
      j["expectation_term"] = cfg.teacher.expectation_term;
      j["noise_dim"] = cfg.teacher.noise_dim;
      break;
    default:
      break;
  }
  return hash_json("teacher", j);
}

std::string student_fingerprint(const ExperimentConfig& cfg) {
  Json j = {{"teacher", teacher_fingerprint(cfg)},
            {"architecture", seqmodel::to_string(cfg.model.architecture)},
            {"model", model_json(cfg.model)},
            {"train", train_json(cfg.train)}};
  if (cfg.method != Method::Base)
    j["distill"] = {{"temperature", cfg.distill.temperature},
                    {"beta", cfg.distill.beta},
                    {"conventional_direction", cfg.distill.conventional_direction}};
  return hash_json("student", j);
}

std::string eval_fingerprint(const ExperimentConfig& cfg) {
  Json j = {{"student", student_fingerprint(cfg)},
            {"cutoffs", cfg.cutoffs},
            {"delta", cfg.delta},
            {"mask_history", cfg.mask_history},
            {"seeds", cfg.seeds}};
  return hash_json("eval", j);
}

SeedPlan plan_seeds(std::uint64_t seed, int members) {
  SeedPlan plan;
  plan.student = derive_seed(seed, "student");
  for (int k = 0; k < members; ++k) {
    plan.members.push_back(derive_seed(seed, "teacher:" + std::to_string(k)));
    plan.subsamples.push_back(derive_seed(seed, "subsample:" + std::to_string(k)));
  }
  return plan;
}

}  // namespace csrec::runner
