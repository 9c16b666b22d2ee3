#include "xfer/config.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "xfer/error.hpp"

namespace xfer::config {

using nlohmann::json;

std::string to_string(Kind k) {
  switch (k) {
    case Kind::medirl: return "medirl";
    case Kind::ada: return "ada";
    case Kind::iada: return "iada";
    case Kind::matl: return "matl";
  }
  return "medirl";
}

namespace {

Kind kind_from_string(const std::string& s) {
  for (auto k : {Kind::medirl, Kind::ada, Kind::iada, Kind::matl}) {
    if (to_string(k) == s) return k;
  }
  throw InvalidInput("config: unknown kind '" + s + "'");
}

std::string method_name(nnet::Method m) { return m == nnet::Method::sgd ? "sgd" : "adam"; }

nnet::Method method_from(const std::string& s, const std::string& where) {
  if (s == "sgd") return nnet::Method::sgd;
  if (s == "adam") return nnet::Method::adam;
  throw InvalidInput("config: " + where + ": unknown optimizer '" + s + "'");
}

// Reads the keys of one JSON object and rejects any key it was not asked about.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidInput("config: " + where_ + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void get(const std::string& key, std::size_t& out) {
    if (const json* v = take(key)) out = to_count(*v, path(key));
  }
  void get(const std::string& key, std::uint64_t& out, bool) {
    if (const json* v = take(key)) out = to_u64(*v, path(key));
  }
  void get(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) fail(key, "a 32-bit integer");
      out = static_cast<int>(x);
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
      if (!std::isfinite(out)) fail(key, "finite");
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array of counts");
      out.clear();
      for (const auto& e : *v) out.push_back(to_count(e, path(key)));
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw InvalidInput("config: " + path(key) + " must be " + what);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) {
        throw InvalidInput("config: unknown key '" + key + "'" + (where_.empty() ? "" : " in " + where_));
      }
    }
  }

  static std::size_t to_count(const json& v, const std::string& where) {
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::size_t>(v.get<std::int64_t>());
    throw InvalidInput("config: " + where + " must be a nonnegative integer");
  }

  static std::uint64_t to_u64(const json& v, const std::string& where) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw InvalidInput("config: " + where + " must be a 64-bit unsigned integer");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& where, const std::string& what) {
  if (!ok) throw InvalidInput("config: " + where + " " + what);
}

// --- medirl ---------------------------------------------------------------

json medirl_json(const MedirlBlock& b) {
  const auto& g = b.grid;
  return {
      {"grid",
       {{"width", g.width},
        {"height", g.height},
        {"obstacle_density", g.obstacle_density},
        {"patches", g.patches},
        {"appearance_noise", g.appearance_noise},
        {"p_slip", g.p_slip},
        {"horizon", g.horizon == 0 ? mdp::default_horizon(g.width, g.height) : g.horizon},
        {"ground_truth", g.ground_truth == medirl::GroundTruth::linear ? "linear" : "terrain"}}},
      {"demos", b.demos},
      {"model", b.model == medirl::RewardModel::Kind::linear ? "linear" : "deep"},
      {"hidden", b.hidden},
      {"train",
       {{"iterations", b.train.iterations},
        {"optimizer", method_name(b.train.method)},
        {"learning_rate", b.train.learning_rate},
        {"grad_tolerance", b.train.grad_tolerance}}},
      {"pretrain",
       {{"enabled", b.pretrain},
        {"epochs", b.pretrain_config.epochs},
        {"optimizer", method_name(b.pretrain_config.method)},
        {"learning_rate", b.pretrain_config.learning_rate}}},
      {"miscalibration", {{"dx", b.shift_x}, {"dy", b.shift_y}}},
      {"cost_floor", b.cost_floor},
      {"traversable_quantile", b.traversable_quantile},
  };
}

MedirlBlock medirl_from(const json& j) {
  MedirlBlock b;
  Reader r(j, "medirl");
  if (const json* g = r.take("grid")) {
    Reader gr(*g, "medirl.grid");
    gr.get("width", b.grid.width);
    gr.get("height", b.grid.height);
    gr.get("obstacle_density", b.grid.obstacle_density);
    gr.get("patches", b.grid.patches);
    gr.get("appearance_noise", b.grid.appearance_noise);
    gr.get("p_slip", b.grid.p_slip);
    gr.get("horizon", b.grid.horizon);
    std::string truth = "terrain";
    gr.get("ground_truth", truth);
    check(truth == "terrain" || truth == "linear", "medirl.grid.ground_truth", "must be 'terrain' or 'linear'");
    b.grid.ground_truth = truth == "linear" ? medirl::GroundTruth::linear : medirl::GroundTruth::terrain;
    gr.finish();
  }
  if (b.grid.horizon == 0) b.grid.horizon = mdp::default_horizon(b.grid.width, b.grid.height);
  r.get("demos", b.demos);
  std::string model = "deep";
  r.get("model", model);
  check(model == "deep" || model == "linear", "medirl.model", "must be 'deep' or 'linear'");
  b.model = model == "linear" ? medirl::RewardModel::Kind::linear : medirl::RewardModel::Kind::deep;
  r.get("hidden", b.hidden);
  if (const json* t = r.take("train")) {
    Reader tr(*t, "medirl.train");
    tr.get("iterations", b.train.iterations);
    std::string m = method_name(b.train.method);
    tr.get("optimizer", m);
    b.train.method = method_from(m, "medirl.train.optimizer");
    tr.get("learning_rate", b.train.learning_rate);
    tr.get("grad_tolerance", b.train.grad_tolerance);
    tr.finish();
  }
  if (const json* p = r.take("pretrain")) {
    Reader pr(*p, "medirl.pretrain");
    pr.get("enabled", b.pretrain);
    pr.get("epochs", b.pretrain_config.epochs);
    std::string m = method_name(b.pretrain_config.method);
    pr.get("optimizer", m);
    b.pretrain_config.method = method_from(m, "medirl.pretrain.optimizer");
    pr.get("learning_rate", b.pretrain_config.learning_rate);
    pr.finish();
  }
  if (const json* m = r.take("miscalibration")) {
    Reader mr(*m, "medirl.miscalibration");
    mr.get("dx", b.shift_x);
    mr.get("dy", b.shift_y);
    mr.finish();
  }
  r.get("cost_floor", b.cost_floor);
  r.get("traversable_quantile", b.traversable_quantile);
  r.finish();

  check(b.grid.width > 0 && b.grid.height > 0, "medirl.grid", "must have positive width and height");
  check(b.grid.obstacle_density >= 0.0 && b.grid.obstacle_density < 1.0, "medirl.grid.obstacle_density",
        "must lie in [0, 1)");
  check(b.grid.patches > 0, "medirl.grid.patches", "must be positive");
  check(b.grid.appearance_noise >= 0.0, "medirl.grid.appearance_noise", "must be nonnegative");
  check(b.grid.p_slip >= 0.0 && b.grid.p_slip <= 1.0, "medirl.grid.p_slip", "must lie in [0, 1]");
  check(b.demos > 0, "medirl.demos", "must be positive");
  check(b.train.learning_rate > 0.0, "medirl.train.learning_rate", "must be positive");
  check(b.train.grad_tolerance >= 0.0, "medirl.train.grad_tolerance", "must be nonnegative");
  check(b.pretrain_config.learning_rate > 0.0, "medirl.pretrain.learning_rate", "must be positive");
  check(std::abs(b.shift_x) < static_cast<int>(b.grid.width) && std::abs(b.shift_y) < static_cast<int>(b.grid.height),
        "medirl.miscalibration", "must shift by less than the grid size");
  check(b.cost_floor >= 0.0, "medirl.cost_floor", "must be nonnegative");
  check(b.traversable_quantile > 0.0 && b.traversable_quantile < 1.0, "medirl.traversable_quantile",
        "must lie in (0, 1)");
  return b;
}

// --- ada / iada -----------------------------------------------------------

json domain_json(const ada::DomainSpec& d) {
  return {{"shape", ada::to_string(d.base_shape)},
          {"rotation_deg", d.rotation_deg},
          {"noise_std", d.noise_std},
          {"n_per_class", d.n_per_class}};
}

ada::DomainSpec domain_from(const json& j, const std::string& where) {
  ada::DomainSpec d;
  Reader r(j, where);
  std::string shape = ada::to_string(d.base_shape);
  r.get("shape", shape);
  d.base_shape = ada::shape_from_string(shape);
  r.get("rotation_deg", d.rotation_deg);
  r.get("noise_std", d.noise_std);
  r.get("n_per_class", d.n_per_class);
  r.finish();
  check(d.noise_std > 0.0, where + ".noise_std", "must be positive");
  check(d.n_per_class > 0, where + ".n_per_class", "must be positive");
  return d;
}

json ada_json(const AdaBlock& b, Kind kind) {
  json j{{"source", domain_json(b.source)}};
  if (kind == Kind::ada) {
    j["target"] = domain_json(b.targets.front());
  } else {
    json stream = json::array();
    for (const auto& d : b.targets) stream.push_back(domain_json(d));
    j["stream"] = stream;
  }
  j["steps"] = b.train.steps;
  j["batch_size"] = b.train.batch_size;
  j["learning_rate"] = b.train.learning_rate;
  j["lambda_max"] = b.train.lambda_max;
  j["test_per_class"] = b.train.test_per_class;
  j["arch"] = {{"feature_hidden", b.train.arch.feature_hidden},
               {"label_hidden", b.train.arch.label_hidden},
               {"domain_hidden", b.train.arch.domain_hidden}};
  j["raster"] = b.raster;
  j["raster_extent"] = b.raster_extent;
  return j;
}

AdaBlock ada_defaults(Kind kind) {
  AdaBlock b;
  b.targets.clear();
  for (double deg : kind == Kind::ada ? std::vector<double>{60.0} : std::vector<double>{20.0, 40.0, 60.0}) {
    ada::DomainSpec d;
    d.rotation_deg = deg;
    b.targets.push_back(d);
  }
  return b;
}

AdaBlock ada_from(const json& j, Kind kind) {
  const std::string name = to_string(kind);
  AdaBlock b = ada_defaults(kind);
  Reader r(j, name);
  if (const json* s = r.take("source")) b.source = domain_from(*s, name + ".source");
  if (kind == Kind::ada) {
    if (const json* t = r.take("target")) b.targets = {domain_from(*t, "ada.target")};
  } else if (const json* s = r.take("stream")) {
    if (!s->is_array() || s->empty()) throw InvalidInput("config: iada.stream must be a nonempty array");
    b.targets.clear();
    for (std::size_t i = 0; i < s->size(); ++i) {
      b.targets.push_back(domain_from((*s)[i], "iada.stream[" + std::to_string(i) + "]"));
    }
  }
  r.get("steps", b.train.steps);
  r.get("batch_size", b.train.batch_size);
  r.get("learning_rate", b.train.learning_rate);
  r.get("lambda_max", b.train.lambda_max);
  r.get("test_per_class", b.train.test_per_class);
  if (const json* a = r.take("arch")) {
    Reader ar(*a, name + ".arch");
    ar.get("feature_hidden", b.train.arch.feature_hidden);
    ar.get("label_hidden", b.train.arch.label_hidden);
    ar.get("domain_hidden", b.train.arch.domain_hidden);
    ar.finish();
  }
  r.get("raster", b.raster);
  r.get("raster_extent", b.raster_extent);
  r.finish();
  check(b.train.batch_size > 0, name + ".batch_size", "must be positive");
  check(b.train.learning_rate > 0.0, name + ".learning_rate", "must be positive");
  check(b.train.lambda_max >= 0.0, name + ".lambda_max", "must be nonnegative");
  check(b.train.test_per_class > 0, name + ".test_per_class", "must be positive");
  check(!b.train.arch.feature_hidden.empty(), name + ".arch.feature_hidden", "must not be empty");
  check(b.raster != 1, name + ".raster", "must be 0 or at least 2");
  check(b.raster_extent > 0.0, name + ".raster_extent", "must be positive");
  return b;
}

// --- matl -----------------------------------------------------------------

json matl_json(const MatlBlock& b) {
  const auto& e = b.env;
  json modes = json::array();
  for (auto m : b.modes) modes.push_back(matl::to_string(m));
  return {
      {"env",
       {{"width", e.width},
        {"height", e.height},
        {"start", {e.start_x, e.start_y}},
        {"goal", {e.goal_x, e.goal_y}},
        {"horizon", e.horizon == 0 ? mdp::default_horizon(e.width, e.height) : e.horizon},
        {"sim_p_slip", e.sim_p_slip},
        {"real_p_slip", e.real_p_slip},
        {"sim_remap", e.sim_remap},
        {"real_remap", e.real_remap}}},
      {"iterations", b.train.iterations},
      {"rollouts", b.train.rollouts},
      {"policy_lr", b.train.policy_lr},
      {"disc_lr", b.train.disc_lr},
      {"disc_steps", b.train.disc_steps},
      {"disc_hidden", b.train.disc_hidden},
      {"lambda", b.train.lambda},
      {"epsilon", b.train.epsilon},
      {"entropy_coef", b.train.entropy_coef},
      {"pretrain_iterations", b.train.pretrain_iterations},
      {"success_window", b.train.success_window},
      {"modes", modes},
  };
}

void read_cell(Reader& r, const std::string& key, std::size_t& x, std::size_t& y) {
  if (const json* v = r.take(key)) {
    if (!v->is_array() || v->size() != 2) r.fail(key, "an [x, y] pair");
    x = Reader::to_count((*v)[0], r.path(key));
    y = Reader::to_count((*v)[1], r.path(key));
  }
}

void read_remap(Reader& r, const std::string& key, std::array<int, mdp::kGridActions>& out) {
  if (const json* v = r.take(key)) {
    if (!v->is_array() || v->size() != mdp::kGridActions) r.fail(key, "an array of 5 action indices");
    for (std::size_t i = 0; i < mdp::kGridActions; ++i) {
      const auto a = Reader::to_count((*v)[i], r.path(key));
      if (a >= mdp::kGridActions) r.fail(key, "an array of 5 action indices");
      out[i] = static_cast<int>(a);
    }
  }
}

MatlBlock matl_from(const json& j) {
  MatlBlock b;
  Reader r(j, "matl");
  if (const json* e = r.take("env")) {
    Reader er(*e, "matl.env");
    er.get("width", b.env.width);
    er.get("height", b.env.height);
    read_cell(er, "start", b.env.start_x, b.env.start_y);
    read_cell(er, "goal", b.env.goal_x, b.env.goal_y);
    er.get("horizon", b.env.horizon);
    er.get("sim_p_slip", b.env.sim_p_slip);
    er.get("real_p_slip", b.env.real_p_slip);
    read_remap(er, "sim_remap", b.env.sim_remap);
    read_remap(er, "real_remap", b.env.real_remap);
    er.finish();
  }
  if (b.env.horizon == 0) b.env.horizon = mdp::default_horizon(b.env.width, b.env.height);
  auto& t = b.train;
  r.get("iterations", t.iterations);
  r.get("rollouts", t.rollouts);
  r.get("policy_lr", t.policy_lr);
  r.get("disc_lr", t.disc_lr);
  r.get("disc_steps", t.disc_steps);
  r.get("disc_hidden", t.disc_hidden);
  r.get("lambda", t.lambda);
  r.get("epsilon", t.epsilon);
  r.get("entropy_coef", t.entropy_coef);
  r.get("pretrain_iterations", t.pretrain_iterations);
  r.get("success_window", t.success_window);
  if (const json* m = r.take("modes")) {
    if (!m->is_array() || m->empty()) r.fail("modes", "a nonempty array of mode names");
    b.modes.clear();
    for (const auto& e : *m) {
      if (!e.is_string()) r.fail("modes", "a nonempty array of mode names");
      const auto mode = matl::train_mode_from_string(e.get<std::string>());
      for (auto seen : b.modes) check(seen != mode, "matl.modes", "must not repeat a mode");
      b.modes.push_back(mode);
    }
  }
  r.finish();
  check(t.rollouts > 0, "matl.rollouts", "must be positive");
  check(t.policy_lr > 0.0 && t.disc_lr > 0.0, "matl", "learning rates must be positive");
  check(t.lambda >= 0.0, "matl.lambda", "must be nonnegative");
  check(t.epsilon > 0.0 && t.epsilon < 0.5, "matl.epsilon", "must lie in (0, 0.5)");
  check(t.entropy_coef >= 0.0, "matl.entropy_coef", "must be nonnegative");
  check(t.success_window > 0, "matl.success_window", "must be positive");
  check(b.env.sim_p_slip >= 0.0 && b.env.sim_p_slip <= 1.0 && b.env.real_p_slip >= 0.0 && b.env.real_p_slip <= 1.0,
        "matl.env", "slip probabilities must lie in [0, 1]");
  matl::make_env_pair(b.env);  // geometry checks
  return b;
}

}  // namespace

ExperimentConfig from_json(const json& j) {
  Reader r(j, "");
  ExperimentConfig cfg;
  std::string kind;
  if (!r.has("kind")) throw InvalidInput("config: missing required key 'kind'");
  r.get("kind", kind);
  cfg.kind = kind_from_string(kind);
  if (!r.has("seed")) throw InvalidInput("config: missing required key 'seed'");
  r.get("seed", cfg.seed, true);
  if (const json* s = r.take("seeds")) {
    if (!s->is_array()) r.fail("seeds", "an array of seeds");
    for (const auto& e : *s) cfg.seeds.push_back(Reader::to_u64(e, "seeds"));
  }
  std::string out = cfg.out_dir.string();
  r.get("out_dir", out);
  cfg.out_dir = out;

  for (auto k : {Kind::medirl, Kind::ada, Kind::iada, Kind::matl}) {
    if (k != cfg.kind && r.has(to_string(k))) {
      throw InvalidInput("config: block '" + to_string(k) + "' does not belong to kind '" + kind + "'");
    }
  }
  const json empty = json::object();
  const json* block = r.take(kind);
  const json& body = block ? *block : empty;
  switch (cfg.kind) {
    case Kind::medirl: cfg.medirl = medirl_from(body); break;
    case Kind::ada:
    case Kind::iada: cfg.ada = ada_from(body, cfg.kind); break;
    case Kind::matl: cfg.matl = matl_from(body); break;
  }
  r.finish();
  return cfg;
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("config: malformed JSON: ") + e.what());
  }
  return from_json(j);
}

json to_json(const ExperimentConfig& cfg, bool include_out_dir) {
  json j{{"kind", to_string(cfg.kind)}, {"seed", cfg.seed}};
  if (!cfg.seeds.empty()) j["seeds"] = cfg.seeds;
  if (include_out_dir) j["out_dir"] = cfg.out_dir.string();
  switch (cfg.kind) {
    case Kind::medirl: j["medirl"] = medirl_json(cfg.medirl); break;
    case Kind::ada:
    case Kind::iada: j[to_string(cfg.kind)] = ada_json(cfg.ada, cfg.kind); break;
    case Kind::matl: j["matl"] = matl_json(cfg.matl); break;
  }
  return j;
}

}  // namespace xfer::config
