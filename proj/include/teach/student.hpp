#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "teach/core.hpp"
#include "teach/envs.hpp"

namespace teach {

inline constexpr int kStudentInputDim = 12;
using StudentInput = std::array<double, kStudentInputDim>;

// Scaled state, goal and goal offset for a parking6 state.
StudentInput parking_features(const StateVector& state, const StateVector& goal);

// Fully connected net: tanh hidden layers, linear output.
class PolicyNet {
 public:
  PolicyNet() = default;
  // Glorot-uniform weights, zero biases.
  PolicyNet(std::vector<int> layer_sizes, std::uint64_t seed);

  static PolicyNet parking_default(std::uint64_t seed);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);
  bool finite() const;

  // Columns of X are inputs; returns one output column per input.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  ActionVector predict(const StudentInput& input) const;

  // Mean squared error over all outputs of the batch; gradient flattened in parameters() order.
  double loss_and_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::vector<double>& grad) const;
  double loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const;

  void save(const std::filesystem::path& path) const;
  static PolicyNet load(const std::filesystem::path& path);

  bool operator==(const PolicyNet& other) const;

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

struct BCDataset {
  std::vector<StudentInput> inputs;
  std::vector<ActionVector> actions;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
  void append(const BCDataset& other);
  void push(const StudentInput& in, const ActionVector& a);
  // Pairs whose acceleration (action[1]) is negative.
  std::size_t reverse_count() const;
  double reverse_fraction() const;
  Eigen::MatrixXd input_matrix() const;
  Eigen::MatrixXd action_matrix() const;
};

// Goal-conditioned pairs from every step of every parking trajectory.
BCDataset bc_dataset(std::span<const Trajectory> trajs);
// Pairs from steps [begin, end) of one trajectory.
BCDataset bc_dataset(const Trajectory& traj, int begin, int end);

// Keeps all pairs with action[1] >= 0 and llround(keep_fraction * count) of the rest.
BCDataset filter_reverse(const BCDataset& data, double keep_fraction, std::uint64_t seed);

// Uniform draw of `count` pairs with replacement.
BCDataset sample_with_replacement(const BCDataset& data, std::size_t count, std::uint64_t seed);

// Exactly `count` pairs: the data itself when sizes match, a seeded subset
// (original order) when it is larger, draws with replacement when smaller.
BCDataset resample_to_size(const BCDataset& data, std::size_t count, std::uint64_t seed);

struct TrainConfig {
  int epochs = 50;
  double lr = 5e-4;
  int batch = 256;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct LossCurve {
  std::vector<double> epoch_loss;

  void write_csv(const std::filesystem::path& path) const;
};

// Called after each completed epoch (1-based).
using EpochHook = std::function<void(int epoch, const PolicyNet& net)>;

// Adam on shuffled mini-batches; records the mean batch loss of each epoch.
// Throws Error naming the epoch when the loss becomes non-finite.
LossCurve bc_train(PolicyNet& net, const BCDataset& data, const TrainConfig& cfg, const EpochHook& hook = {});

// Same optimizer, fresh moment estimates, applied to practice pairs.
LossCurve fine_tune(PolicyNet& net, const BCDataset& practice, const TrainConfig& cfg, const EpochHook& hook = {});

double eval_mse(const PolicyNet& net, const BCDataset& data);

class NetPolicy final : public Policy {
 public:
  explicit NetPolicy(const PolicyNet& net) : net_(net) {}
  ActionVector act(const Scenario& scenario, const StateVector& state) const override;

 private:
  const PolicyNet& net_;
};

Trajectory rollout(const PolicyNet& net, const Scenario& scenario, const ParkingEnv& env, int horizon,
                   std::string id);

}  // namespace teach
