#pragma once

#include "cpsattack/attack_mdp.hpp"
#include "cpsattack/estimation_defense.hpp"
#include "cpsattack/system_model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cpsattack {

/// Linear decay from `initial` to `final` over the first `decay_episodes`
/// episodes (half of the budget when negative), constant afterwards.
struct EpsilonSchedule {
    double initial = 1.0;
    double final = 0.05;
    int decay_episodes = -1;

    double at(int episode, int total_episodes) const;
};

struct RlConfig {
    double alpha = 0.1;
    double gamma = 0.95;
    EpsilonSchedule epsilon;
    int episodes = 1000;
    int horizon = 50;
    std::uint64_t seed = 1;
    int checkpoint_every = 0;  ///< episodes between checkpoint callbacks; 0 disables

    void validate() const;
};

class QTable {
  public:
    QTable() = default;
    QTable(std::size_t states, std::size_t actions, double init = 0.0);

    std::size_t states() const { return states_; }
    std::size_t actions() const { return actions_; }
    double& at(std::size_t s, std::size_t a);
    double at(std::size_t s, std::size_t a) const;
    std::vector<double> row(std::size_t s) const;
    double row_max(std::size_t s) const;
    const std::vector<double>& data() const { return q_; }

  private:
    std::size_t states_ = 0, actions_ = 0;
    std::vector<double> q_;
};

/// Q(s,a) += alpha (r + gamma max Q(s',.) - Q(s,a)); the incremental form of
/// (1-alpha) Q + alpha (r + gamma max Q).
void q_update(QTable& q, std::size_t s, std::size_t a, double r, std::size_t s_next, const RlConfig& cfg);

/// Index of the largest value; ties go to the smallest index.
std::size_t argmax_first(const std::vector<double>& values);

/// One uniform draw decides exploration; a second picks the random action.
std::size_t epsilon_greedy(const std::vector<double>& values, double epsilon, Rng& rng);

enum class EncoderKind { fsr, joint_one_hot };

/// Binary features over an ErrorGrid. fsr: one block of d per dimension with
/// a single 1 at the cell coordinate (length n d). joint_one_hot: a single 1
/// at the joint cell index (length d^n).
struct FsrEncoder {
    ErrorGrid grid;
    EncoderKind kind = EncoderKind::fsr;

    std::size_t length() const;
    std::vector<std::size_t> active(const Vector& e) const;
    Vector encode(const Vector& e) const;
};

Vector fsr_encode(const Vector& e, const FsrEncoder& encoder);

/// Q(e, a) = phi(e)^T theta(a); theta is stored column-per-action.
class LinearQ {
  public:
    LinearQ() = default;
    LinearQ(FsrEncoder encoder, std::size_t actions);

    const FsrEncoder& encoder() const { return encoder_; }
    std::size_t actions() const { return static_cast<std::size_t>(theta_.cols()); }
    const Matrix& theta() const { return theta_; }
    Matrix& theta() { return theta_; }

    /// Dense dot products phi^T theta(a) for every action.
    std::vector<double> values(const Vector& phi) const;
    std::vector<double> values_at(const Vector& e) const { return values(encoder_.encode(e)); }
    std::size_t greedy(const Vector& e) const { return argmax_first(values_at(e)); }

    /// Multiply-adds spent in values() since construction.
    std::uint64_t op_count() const { return ops_; }

  private:
    FsrEncoder encoder_;
    Matrix theta_;
    mutable std::uint64_t ops_ = 0;
};

struct EnvOptions {
    double eta = 0.0;
    MitigationStrategy mitigation;
    NoiseKind measurement_noise = NoiseKind::gaussian;
    double noise_dof = 4.0;
    bool random_start = true;  ///< e[0] ~ N(0, P_e); zero otherwise
};

/// Closed-loop KF error dynamics with detector and mitigation. Reward of a
/// step is ||e'||^2 of the realized next error.
class ErrorEnv {
  public:
    ErrorEnv(SystemModel model, SteadyStateKalman ssk, ActionSet actions, EnvOptions opts);

    const Vector& reset(Rng& rng);
    double step(std::size_t action, Rng& rng);

    const Vector& state() const { return e_; }
    int last_alarm() const { return alarm_; }
    std::size_t num_actions() const { return actions_.size(); }
    Eigen::Index dim() const { return model_.n(); }
    const ActionSet& actions() const { return actions_; }
    const SystemModel& model() const { return model_; }
    const SteadyStateKalman& kalman() const { return ssk_; }
    const EnvOptions& options() const { return opts_; }
    std::uint64_t steps_taken() const { return steps_; }

  private:
    SystemModel model_;
    SteadyStateKalman ssk_;
    ActionSet actions_;
    EnvOptions opts_;
    DetectorConfig det_;
    NoiseSampler w_, v_, e0_;
    Vector e_;
    int alarm_ = 0;
    std::uint64_t steps_ = 0;
};

using PolicyFn = std::function<std::size_t(const Vector& e, int t)>;

struct EvalResult {
    double mean_cumulative = 0.0;
    double std_error = 0.0;
    double time_average = 0.0;  ///< mean_cumulative / horizon
    std::vector<double> per_step;
    std::vector<double> alarm_rate;
    int runs = 0;
    int horizon = 0;
};

/// Average cumulative reward of a policy over independent runs; run k uses
/// the stream derive_seed(seed, k, "eval").
EvalResult evaluate_policy(const PolicyFn& policy, ErrorEnv env, int runs, int horizon, std::uint64_t seed);

struct TrainStats {
    int episodes = 0;
    std::uint64_t env_steps = 0;
    std::uint64_t updates = 0;
    double max_abs_weight = 0.0;
    double last_loss = 0.0;
};

using TabularCheckpoint = std::function<void(int episode, std::uint64_t env_steps, const QTable&)>;
using LinearCheckpoint = std::function<void(int episode, std::uint64_t env_steps, const LinearQ&)>;

/// Tabular Q-learning over the grid cells of the error.
QTable q_tabular_train(ErrorEnv env, const ErrorGrid& grid, const RlConfig& cfg, TrainStats* stats = nullptr,
                       const TabularCheckpoint& checkpoint = {});

/// Q-learning with linear function approximation on binary features.
/// Throws DivergenceError if any weight exceeds 1e8 in magnitude.
LinearQ qlfa_train(ErrorEnv env, const FsrEncoder& encoder, const RlConfig& cfg, TrainStats* stats = nullptr,
                   const LinearCheckpoint& checkpoint = {});

/// Feedforward ReLU network with a linear output layer.
class Mlp {
  public:
    Mlp() = default;
    /// sizes = {inputs, hidden..., outputs}; scaled uniform fan-in initialization.
    Mlp(const std::vector<int>& sizes, Rng& rng);
    /// Rebuilds a network from stored parameters (params() order).
    Mlp(const std::vector<int>& sizes, const Vector& params);

    const std::vector<int>& sizes() const { return sizes_; }
    std::size_t num_params() const;
    Vector params() const;
    void set_params(const Vector& p);

    /// X is inputs x batch; returns outputs x batch.
    Matrix forward(const Matrix& X) const;

    /// Loss 0.5 mean_b (Q(x_b)[a_b] - y_b)^2 and its gradient in params() order.
    double loss_and_grad(const Matrix& X, const std::vector<std::size_t>& actions, const Vector& targets,
                         Vector& grad) const;
    double loss(const Matrix& X, const std::vector<std::size_t>& actions, const Vector& targets) const;

  private:
    std::vector<int> sizes_;
    std::vector<Matrix> W_;
    std::vector<Vector> b_;
};

class Adam {
  public:
    explicit Adam(std::size_t n, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(Vector& params, const Vector& grad);

  private:
    double lr_, b1_, b2_, eps_;
    Vector m_, v_;
    long t_ = 0;
};

struct NetSpec {
    int hidden_layers = 5;
    int hidden_units = 20;
    double learning_rate = 1e-3;
    int batch = 200;
    std::size_t replay_capacity = 50'000;
    int target_refresh = 500;  ///< gradient steps between target copies
    int train_every = 1;       ///< environment steps per gradient step
};

/// Network Q-function. Inputs are e / input_scale; outputs are Q values in
/// units of reward_scale (training rewards are divided by it).
struct NeuralQ {
    Mlp net;
    Vector input_scale;
    double reward_scale = 1.0;

    std::vector<double> values_at(const Vector& e) const;
    std::size_t greedy(const Vector& e) const { return argmax_first(values_at(e)); }
};

/// Uniform replay memory with a fixed capacity (oldest entries overwritten).
class ReplayBuffer {
  public:
    ReplayBuffer(std::size_t capacity, Eigen::Index dim);
    void push(const Vector& s, std::size_t a, double r, const Vector& s_next);
    std::size_t size() const { return size_; }
    /// Distinct indices, uniform without replacement.
    std::vector<std::size_t> sample(std::size_t batch, Rng& rng) const;

    Matrix states, next_states;  ///< dim x capacity
    std::vector<std::size_t> actions;
    std::vector<double> rewards;

  private:
    std::size_t capacity_, size_ = 0, head_ = 0;
};

using NeuralCheckpoint = std::function<void(int episode, std::uint64_t env_steps, const NeuralQ&)>;

/// DQN-style training with experience replay and a periodically refreshed
/// target network. Throws DivergenceError on a non-finite loss.
NeuralQ qnlfa_train(ErrorEnv env, const RlConfig& cfg, const NetSpec& spec, TrainStats* stats = nullptr,
                    const NeuralCheckpoint& checkpoint = {});

/// Untrained network with the same initialization as qnlfa_train.
NeuralQ make_neural_q(const ErrorEnv& env, const RlConfig& cfg, const NetSpec& spec);

}  // namespace cpsattack
