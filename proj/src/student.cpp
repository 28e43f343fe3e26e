#include "teach/student.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "teach/random.hpp"

namespace teach {

namespace {

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

StudentInput parking_features(const StateVector& s, const StateVector& g) {
  return {s[0] / 20.0, s[1] / 20.0, s[2] / 5.0, s[3] / 5.0, s[4], s[5],
          g[0] / 20.0, g[1] / 20.0, g[4], g[5], (g[0] - s[0]) / 20.0, (g[1] - s[1]) / 20.0};
}

// ---------------------------------------------------------------------------
// PolicyNet
// ---------------------------------------------------------------------------

PolicyNet::PolicyNet(std::vector<int> layer_sizes, std::uint64_t seed) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw Error("a policy net needs at least an input and an output layer");
  Rng rng(derive_seed(seed, "policy-init"));
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    if (in < 1 || out < 1) throw Error("layer sizes must be positive");
    const double limit = std::sqrt(6.0 / (in + out));
    Eigen::MatrixXd w(out, in);
    for (int c = 0; c < in; ++c) {
      for (int r = 0; r < out; ++r) w(r, c) = rng.uniform(-limit, limit);
    }
    weights_.push_back(std::move(w));
    biases_.push_back(Eigen::VectorXd::Zero(out));
  }
}

PolicyNet PolicyNet::parking_default(std::uint64_t seed) { return PolicyNet({kStudentInputDim, 64, 64, 64, 2}, seed); }

std::size_t PolicyNet::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

std::vector<double> PolicyNet::parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    flat.insert(flat.end(), weights_[l].data(), weights_[l].data() + weights_[l].size());
    flat.insert(flat.end(), biases_[l].data(), biases_[l].data() + biases_[l].size());
  }
  return flat;
}

void PolicyNet::set_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw Error("parameter vector has the wrong length");
  std::size_t k = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    std::copy_n(flat.data() + k, weights_[l].size(), weights_[l].data());
    k += weights_[l].size();
    std::copy_n(flat.data() + k, biases_[l].size(), biases_[l].data());
    k += biases_[l].size();
  }
}

bool PolicyNet::finite() const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
  }
  return true;
}

Eigen::MatrixXd PolicyNet::forward(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    a = l + 1 < weights_.size() ? Eigen::MatrixXd(z.array().tanh()) : std::move(z);
  }
  return a;
}

ActionVector PolicyNet::predict(const StudentInput& input) const {
  const Eigen::Map<const Eigen::VectorXd> x(input.data(), kStudentInputDim);
  const Eigen::MatrixXd y = forward(x);
  return {y(0, 0), y(1, 0)};
}

double PolicyNet::loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const {
  return (forward(x) - y).squaredNorm() / static_cast<double>(y.size());
}

double PolicyNet::loss_and_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                    std::vector<double>& grad) const {
  const std::size_t layers = weights_.size();
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(layers + 1);
  acts.push_back(x);
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = weights_[l] * acts.back();
    z.colwise() += biases_[l];
    if (l + 1 < layers) z = z.array().tanh();
    acts.push_back(std::move(z));
  }
  const Eigen::MatrixXd diff = acts.back() - y;
  const double n = static_cast<double>(y.size());
  const double loss = diff.squaredNorm() / n;

  grad.assign(parameter_count(), 0.0);
  std::vector<std::size_t> offset(layers);
  std::size_t k = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offset[l] = k;
    k += weights_[l].size() + biases_[l].size();
  }
  Eigen::MatrixXd delta = (2.0 / n) * diff;
  for (std::size_t l = layers; l-- > 0;) {
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offset[l], weights_[l].rows(), weights_[l].cols());
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + offset[l] + weights_[l].size(), biases_[l].size());
    gw.noalias() = delta * acts[l].transpose();
    gb = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = weights_[l].transpose() * delta;
      delta = back.array() * (1.0 - acts[l].array().square());
    }
  }
  return loss;
}

bool PolicyNet::operator==(const PolicyNet& other) const {
  return sizes_ == other.sizes_ && parameters() == other.parameters();
}

namespace {
constexpr const char* kCheckpointMagic = "teach-policy-net";
constexpr int kCheckpointVersion = 1;
}  // namespace

void PolicyNet::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << "layers";
  for (int s : sizes_) out << ' ' << s;
  out << "\nactivation tanh\nparams " << parameter_count() << '\n';
  for (double v : parameters()) out << exact(v) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

PolicyNet PolicyNet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic) throw ParseError(path.string() + ": not a policy checkpoint");
  if (version != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::istringstream ls(line);
  std::string tag;
  ls >> tag;
  if (tag != "layers") throw ParseError(path.string() + ": missing layer sizes");
  std::vector<int> sizes;
  for (int s; ls >> s;) sizes.push_back(s);
  std::string act;
  in >> tag >> act;
  if (tag != "activation" || act != "tanh") throw ParseError(path.string() + ": unsupported activation");
  std::size_t count = 0;
  in >> tag >> count;
  PolicyNet net(sizes, 0);
  if (tag != "params" || count != net.parameter_count()) throw ParseError(path.string() + ": parameter count mismatch");
  std::vector<double> flat(count);
  for (auto& v : flat) {
    if (!(in >> v)) throw ParseError(path.string() + ": truncated parameter list");
  }
  net.set_parameters(flat);
  return net;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

void BCDataset::append(const BCDataset& other) {
  inputs.insert(inputs.end(), other.inputs.begin(), other.inputs.end());
  actions.insert(actions.end(), other.actions.begin(), other.actions.end());
}

void BCDataset::push(const StudentInput& in, const ActionVector& a) {
  inputs.push_back(in);
  actions.push_back(a);
}

std::size_t BCDataset::reverse_count() const {
  return static_cast<std::size_t>(std::count_if(actions.begin(), actions.end(), [](const auto& a) { return a[1] < 0.0; }));
}

double BCDataset::reverse_fraction() const {
  return empty() ? 0.0 : static_cast<double>(reverse_count()) / static_cast<double>(size());
}

Eigen::MatrixXd BCDataset::input_matrix() const {
  Eigen::MatrixXd x(kStudentInputDim, static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) {
    for (int d = 0; d < kStudentInputDim; ++d) x(d, static_cast<Eigen::Index>(i)) = inputs[i][d];
  }
  return x;
}

Eigen::MatrixXd BCDataset::action_matrix() const {
  Eigen::MatrixXd y(2, static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) {
    y(0, static_cast<Eigen::Index>(i)) = actions[i][0];
    y(1, static_cast<Eigen::Index>(i)) = actions[i][1];
  }
  return y;
}

BCDataset bc_dataset(const Trajectory& traj, int begin, int end) {
  if (traj.scenario.schema != Schema::parking6) throw UnsupportedSchema("synthetic students only cover parking");
  if (begin < 0 || end > static_cast<int>(traj.size()) || begin > end) throw Error("step range out of bounds");
  const StateVector& goal = traj.scenario.parking_goal().pose;
  BCDataset d;
  for (int t = begin; t < end; ++t) d.push(parking_features(traj.steps[t].state, goal), traj.steps[t].action);
  return d;
}

BCDataset bc_dataset(std::span<const Trajectory> trajs) {
  BCDataset d;
  for (const auto& t : trajs) d.append(bc_dataset(t, 0, static_cast<int>(t.size())));
  return d;
}

BCDataset filter_reverse(const BCDataset& data, double keep_fraction, std::uint64_t seed) {
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) throw Error("keep_fraction must lie in [0, 1]");
  std::vector<std::size_t> reverse;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.actions[i][1] < 0.0) reverse.push_back(i);
  }
  const auto keep = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(reverse.size())));
  Rng rng(derive_seed(seed, "filter-reverse"));
  rng.shuffle(reverse);
  std::vector<bool> drop(data.size(), false);
  for (std::size_t i = keep; i < reverse.size(); ++i) drop[reverse[i]] = true;
  BCDataset out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!drop[i]) out.push(data.inputs[i], data.actions[i]);
  }
  return out;
}

BCDataset sample_with_replacement(const BCDataset& data, std::size_t count, std::uint64_t seed) {
  if (data.empty()) throw Error("cannot sample from an empty dataset");
  Rng rng(seed);
  BCDataset out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = rng.index(data.size());
    out.push(data.inputs[j], data.actions[j]);
  }
  return out;
}

BCDataset resample_to_size(const BCDataset& data, std::size_t count, std::uint64_t seed) {
  if (data.empty()) throw Error("cannot resample an empty dataset");
  if (count == data.size()) return data;
  if (count > data.size()) return sample_with_replacement(data, count, seed);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  BCDataset out;
  for (std::size_t j : idx) out.push(data.inputs[j], data.actions[j]);
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void LossCurve::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < epoch_loss.size(); ++e) out << e + 1 << ',' << exact(epoch_loss[e]) << '\n';
}

LossCurve bc_train(PolicyNet& net, const BCDataset& data, const TrainConfig& cfg, const EpochHook& hook) {
  if (cfg.epochs < 0) throw Error("epochs must be nonnegative");
  if (cfg.batch < 1) throw Error("batch size must be positive");
  if (data.empty()) throw Error("training data is empty");
  LossCurve curve;
  if (cfg.epochs == 0) return curve;

  const Eigen::MatrixXd x = data.input_matrix();
  const Eigen::MatrixXd y = data.action_matrix();
  const auto n = static_cast<Eigen::Index>(data.size());
  std::vector<double> params = net.parameters();
  std::vector<double> m(params.size(), 0.0);
  std::vector<double> v(params.size(), 0.0);
  std::vector<double> grad;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(derive_seed(cfg.seed, "bc-shuffle"));
  long step = 0;
  Eigen::MatrixXd bx;
  Eigen::MatrixXd by;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    int batches = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch) {
      const Eigen::Index len = std::min<Eigen::Index>(cfg.batch, n - start);
      bx.resize(kStudentInputDim, len);
      by.resize(2, len);
      for (Eigen::Index j = 0; j < len; ++j) {
        bx.col(j) = x.col(order[static_cast<std::size_t>(start + j)]);
        by.col(j) = y.col(order[static_cast<std::size_t>(start + j)]);
      }
      const double loss = net.loss_and_gradient(bx, by, grad);
      if (!std::isfinite(loss)) throw Error("training diverged at epoch " + std::to_string(epoch + 1));
      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        params[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
      }
      net.set_parameters(params);
      sum += loss;
      ++batches;
    }
    curve.epoch_loss.push_back(sum / batches);
    if (hook) hook(epoch + 1, net);
  }
  if (!net.finite()) throw Error("training produced non-finite parameters");
  return curve;
}

LossCurve fine_tune(PolicyNet& net, const BCDataset& practice, const TrainConfig& cfg, const EpochHook& hook) {
  if (practice.empty()) throw Error("practice set is empty");
  return bc_train(net, practice, cfg, hook);
}

double eval_mse(const PolicyNet& net, const BCDataset& data) {
  if (data.empty()) throw Error("evaluation data is empty");
  return net.loss(data.input_matrix(), data.action_matrix());
}

ActionVector NetPolicy::act(const Scenario& scenario, const StateVector& state) const {
  return net_.predict(parking_features(state, scenario.parking_goal().pose));
}

Trajectory rollout(const PolicyNet& net, const Scenario& scenario, const ParkingEnv& env, int horizon, std::string id) {
  if (scenario.schema != Schema::parking6) throw UnsupportedSchema("synthetic students only cover parking");
  const NetPolicy policy(net);
  return rollout_policy(policy, scenario, env, horizon, AgentTag::student, std::move(id));
}

}  // namespace teach
