#include "cpsattack/attack_rl.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace cpsattack {

double EpsilonSchedule::at(int episode, int total_episodes) const {
    const int span = decay_episodes >= 0 ? decay_episodes : total_episodes / 2;
    if (span <= 0 || episode >= span) return final;
    return initial + (final - initial) * static_cast<double>(episode) / span;
}

void RlConfig::validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("RlConfig: alpha must be in (0, 1]");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("RlConfig: gamma must be in [0, 1)");
    auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!unit(epsilon.initial) || !unit(epsilon.final)) throw std::invalid_argument("RlConfig: epsilon in [0, 1]");
    if (episodes < 0) throw std::invalid_argument("RlConfig: episodes must be >= 0");
    if (horizon < 1) throw std::invalid_argument("RlConfig: horizon must be >= 1");
}

QTable::QTable(std::size_t states, std::size_t actions, double init)
    : states_(states), actions_(actions), q_(states * actions, init) {}

double& QTable::at(std::size_t s, std::size_t a) {
    if (s >= states_ || a >= actions_) throw std::out_of_range("QTable index out of range");
    return q_[s * actions_ + a];
}

double QTable::at(std::size_t s, std::size_t a) const {
    if (s >= states_ || a >= actions_) throw std::out_of_range("QTable index out of range");
    return q_[s * actions_ + a];
}

std::vector<double> QTable::row(std::size_t s) const {
    if (s >= states_) throw std::out_of_range("QTable row out of range");
    return {q_.begin() + static_cast<std::ptrdiff_t>(s * actions_),
            q_.begin() + static_cast<std::ptrdiff_t>((s + 1) * actions_)};
}

double QTable::row_max(std::size_t s) const {
    const auto r = row(s);
    return *std::max_element(r.begin(), r.end());
}

void q_update(QTable& q, std::size_t s, std::size_t a, double r, std::size_t s_next, const RlConfig& cfg) {
    const double target = r + cfg.gamma * q.row_max(s_next);
    double& cur = q.at(s, a);
    cur += cfg.alpha * (target - cur);
}

std::size_t argmax_first(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("argmax over an empty set");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

std::size_t epsilon_greedy(const std::vector<double>& values, double epsilon, Rng& rng) {
    const double u = uniform01(rng);
    if (u < epsilon) {
        const auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(values.size()));
        return std::min(k, values.size() - 1);
    }
    return argmax_first(values);
}

std::size_t FsrEncoder::length() const {
    if (kind == EncoderKind::joint_one_hot) return grid.size();
    return static_cast<std::size_t>(grid.dims()) * static_cast<std::size_t>(grid.levels());
}

std::vector<std::size_t> FsrEncoder::active(const Vector& e) const {
    require_dims(e.size() == grid.dims(), "FsrEncoder: state dimension mismatch");
    if (kind == EncoderKind::joint_one_hot) return {grid.cell_of(e)};
    std::vector<std::size_t> idx(static_cast<std::size_t>(e.size()));
    const auto d = static_cast<std::size_t>(grid.levels());
    for (Eigen::Index i = 0; i < e.size(); ++i)
        idx[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i) * d + static_cast<std::size_t>(grid.coord_of(e(i), i));
    return idx;
}

Vector FsrEncoder::encode(const Vector& e) const {
    Vector phi = Vector::Zero(static_cast<Eigen::Index>(length()));
    for (auto k : active(e)) phi(static_cast<Eigen::Index>(k)) = 1.0;
    return phi;
}

Vector fsr_encode(const Vector& e, const FsrEncoder& encoder) { return encoder.encode(e); }

LinearQ::LinearQ(FsrEncoder encoder, std::size_t actions)
    : encoder_(std::move(encoder)),
      theta_(Matrix::Zero(static_cast<Eigen::Index>(encoder_.length()), static_cast<Eigen::Index>(actions))) {}

std::vector<double> LinearQ::values(const Vector& phi) const {
    require_dims(phi.size() == theta_.rows(), "LinearQ: feature length mismatch");
    std::vector<double> q(static_cast<std::size_t>(theta_.cols()));
    for (Eigen::Index a = 0; a < theta_.cols(); ++a) {
        double acc = 0.0;
        for (Eigen::Index k = 0; k < phi.size(); ++k) acc += phi(k) * theta_(k, a);
        q[static_cast<std::size_t>(a)] = acc;
    }
    ops_ += static_cast<std::uint64_t>(phi.size()) * static_cast<std::uint64_t>(theta_.cols());
    return q;
}

ErrorEnv::ErrorEnv(SystemModel model, SteadyStateKalman ssk, ActionSet actions, EnvOptions opts)
    : model_(std::move(model)), ssk_(std::move(ssk)), actions_(std::move(actions)), opts_(opts) {
    if (actions_.size() == 0) throw std::invalid_argument("ErrorEnv: empty action set");
    for (const auto& a : actions_.actions) require_dims(a.size() == model_.m(), "ErrorEnv: action dimension != m");
    det_ = DetectorConfig::make(ssk_, opts_.eta);
    w_ = NoiseSampler(NoiseSpec{NoiseKind::gaussian, model_.Q, 4.0});
    v_ = NoiseSampler(NoiseSpec{opts_.measurement_noise, model_.R, opts_.noise_dof});
    e0_ = NoiseSampler(NoiseSpec{NoiseKind::gaussian, ssk_.P_e, 4.0});
    e_ = Vector::Zero(model_.n());
}

const Vector& ErrorEnv::reset(Rng& rng) {
    e_ = opts_.random_start ? e0_.sample(rng) : Vector::Zero(model_.n());
    alarm_ = 0;
    return e_;
}

double ErrorEnv::step(std::size_t action, Rng& rng) {
    if (action >= actions_.size()) throw std::out_of_range("ErrorEnv: action index out of range");
    const Vector& a = actions_[action];
    e_ = sample_next_error(e_, a, model_, ssk_, det_, opts_.mitigation, w_, v_, rng, &alarm_);
    ++steps_;
    return e_.squaredNorm();
}

EvalResult evaluate_policy(const PolicyFn& policy, ErrorEnv env, int runs, int horizon, std::uint64_t seed) {
    if (runs < 1 || horizon < 1) throw std::invalid_argument("evaluate_policy: runs and horizon must be positive");
    EvalResult out;
    out.runs = runs;
    out.horizon = horizon;
    out.per_step.assign(static_cast<std::size_t>(horizon), 0.0);
    out.alarm_rate.assign(static_cast<std::size_t>(horizon), 0.0);
    double s1 = 0.0, s2 = 0.0;
    for (int k = 0; k < runs; ++k) {
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(k), "eval");
        env.reset(rng);
        double total = 0.0;
        for (int t = 0; t < horizon; ++t) {
            const double r = env.step(policy(env.state(), t), rng);
            total += r;
            out.per_step[static_cast<std::size_t>(t)] += r;
            out.alarm_rate[static_cast<std::size_t>(t)] += env.last_alarm();
        }
        s1 += total;
        s2 += total * total;
    }
    for (auto& x : out.per_step) x /= runs;
    for (auto& x : out.alarm_rate) x /= runs;
    out.mean_cumulative = s1 / runs;
    if (runs > 1) {
        const double var = std::max(0.0, (s2 - runs * out.mean_cumulative * out.mean_cumulative) / (runs - 1));
        out.std_error = std::sqrt(var / runs);
    }
    out.time_average = out.mean_cumulative / horizon;
    return out;
}

QTable q_tabular_train(ErrorEnv env, const ErrorGrid& grid, const RlConfig& cfg, TrainStats* stats,
                       const TabularCheckpoint& checkpoint) {
    cfg.validate();
    QTable q(grid.size(), env.num_actions());
    Rng rng = make_rng(cfg.seed, 0, "train");
    std::uint64_t steps = 0;
    for (int ep = 0; ep < cfg.episodes; ++ep) {
        const double eps = cfg.epsilon.at(ep, cfg.episodes);
        env.reset(rng);
        std::size_t s = grid.cell_of(env.state());
        for (int t = 0; t < cfg.horizon; ++t) {
            const std::size_t a = epsilon_greedy(q.row(s), eps, rng);
            const double r = env.step(a, rng);
            const std::size_t s_next = grid.cell_of(env.state());
            q_update(q, s, a, r, s_next, cfg);
            s = s_next;
            ++steps;
        }
        if (checkpoint && cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0) checkpoint(ep + 1, steps, q);
    }
    if (stats) {
        stats->episodes = cfg.episodes;
        stats->env_steps = steps;
        stats->updates = steps;
        double m = 0.0;
        for (double x : q.data()) m = std::max(m, std::abs(x));
        stats->max_abs_weight = m;
    }
    return q;
}

LinearQ qlfa_train(ErrorEnv env, const FsrEncoder& encoder, const RlConfig& cfg, TrainStats* stats,
                   const LinearCheckpoint& checkpoint) {
    cfg.validate();
    LinearQ lq(encoder, env.num_actions());
    Rng rng = make_rng(cfg.seed, 0, "train");
    std::uint64_t steps = 0;
    double max_abs = 0.0;
    for (int ep = 0; ep < cfg.episodes; ++ep) {
        const double eps = cfg.epsilon.at(ep, cfg.episodes);
        env.reset(rng);
        Vector phi = encoder.encode(env.state());
        std::vector<double> q = lq.values(phi);
        for (int t = 0; t < cfg.horizon; ++t) {
            const std::size_t a = epsilon_greedy(q, eps, rng);
            const double r = env.step(a, rng);
            Vector phi_next = encoder.encode(env.state());
            std::vector<double> q_next = lq.values(phi_next);
            const double target = r + cfg.gamma * *std::max_element(q_next.begin(), q_next.end());
            const double delta = target - q[a];
            for (Eigen::Index k = 0; k < phi.size(); ++k) {
                if (phi(k) == 0.0) continue;
                double& th = lq.theta()(k, static_cast<Eigen::Index>(a));
                th += cfg.alpha * delta * phi(k);
                max_abs = std::max(max_abs, std::abs(th));
            }
            if (!(max_abs <= 1e8)) {
                std::ostringstream os;
                os << "QLFA diverged at episode " << ep << ", step " << t << ": max |theta| = " << max_abs
                   << ", TD error " << delta << ", alpha " << cfg.alpha << ", gamma " << cfg.gamma;
                throw DivergenceError(os.str());
            }
            // next state may share features with the one just updated
            phi.swap(phi_next);
            q = lq.values(phi);
            ++steps;
        }
        if (checkpoint && cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0)
            checkpoint(ep + 1, steps, lq);
    }
    if (stats) {
        stats->episodes = cfg.episodes;
        stats->env_steps = steps;
        stats->updates = steps;
        stats->max_abs_weight = max_abs;
    }
    return lq;
}

Mlp::Mlp(const std::vector<int>& sizes, Rng& rng) : sizes_(sizes) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        const int fan_in = sizes_[l], fan_out = sizes_[l + 1];
        if (fan_in < 1 || fan_out < 1) throw std::invalid_argument("Mlp: layer sizes must be positive");
        const bool last = l + 2 == sizes_.size();
        const double limit = std::sqrt((last ? 3.0 : 6.0) / fan_in);
        Matrix W(fan_out, fan_in);
        for (Eigen::Index j = 0; j < W.cols(); ++j)
            for (Eigen::Index i = 0; i < W.rows(); ++i) W(i, j) = limit * (2.0 * uniform01(rng) - 1.0);
        W_.push_back(std::move(W));
        b_.push_back(Vector::Zero(fan_out));
    }
}

Mlp::Mlp(const std::vector<int>& sizes, const Vector& params) : sizes_(sizes) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        if (sizes_[l] < 1 || sizes_[l + 1] < 1) throw std::invalid_argument("Mlp: layer sizes must be positive");
        W_.push_back(Matrix::Zero(sizes_[l + 1], sizes_[l]));
        b_.push_back(Vector::Zero(sizes_[l + 1]));
    }
    set_params(params);
}

std::size_t Mlp::num_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) n += static_cast<std::size_t>(W_[l].size() + b_[l].size());
    return n;
}

Vector Mlp::params() const {
    Vector p(static_cast<Eigen::Index>(num_params()));
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
        p.segment(off, W_[l].size()) = Eigen::Map<const Vector>(W_[l].data(), W_[l].size());
        off += W_[l].size();
        p.segment(off, b_[l].size()) = b_[l];
        off += b_[l].size();
    }
    return p;
}

void Mlp::set_params(const Vector& p) {
    require_dims(static_cast<std::size_t>(p.size()) == num_params(), "Mlp::set_params: length mismatch");
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
        Eigen::Map<Vector>(W_[l].data(), W_[l].size()) = p.segment(off, W_[l].size());
        off += W_[l].size();
        b_[l] = p.segment(off, b_[l].size());
        off += b_[l].size();
    }
}

Matrix Mlp::forward(const Matrix& X) const {
    require_dims(!W_.empty() && X.rows() == W_.front().cols(), "Mlp::forward: input size mismatch");
    Matrix H = X;
    for (std::size_t l = 0; l < W_.size(); ++l) {
        Matrix Z = W_[l] * H;
        Z.colwise() += b_[l];
        H = l + 1 < W_.size() ? Matrix(Z.cwiseMax(0.0)) : Z;
    }
    return H;
}

double Mlp::loss(const Matrix& X, const std::vector<std::size_t>& actions, const Vector& targets) const {
    const Matrix out = forward(X);
    double acc = 0.0;
    for (Eigen::Index b = 0; b < X.cols(); ++b) {
        const double d = out(static_cast<Eigen::Index>(actions[static_cast<std::size_t>(b)]), b) - targets(b);
        acc += d * d;
    }
    return 0.5 * acc / static_cast<double>(X.cols());
}

double Mlp::loss_and_grad(const Matrix& X, const std::vector<std::size_t>& actions, const Vector& targets,
                          Vector& grad) const {
    const Eigen::Index B = X.cols();
    require_dims(static_cast<Eigen::Index>(actions.size()) == B && targets.size() == B,
                 "Mlp::loss_and_grad: batch size mismatch");
    const std::size_t L = W_.size();
    std::vector<Matrix> H(L + 1), Z(L);
    H[0] = X;
    for (std::size_t l = 0; l < L; ++l) {
        Z[l] = W_[l] * H[l];
        Z[l].colwise() += b_[l];
        H[l + 1] = l + 1 < L ? Matrix(Z[l].cwiseMax(0.0)) : Z[l];
    }
    Matrix dZ = Matrix::Zero(H[L].rows(), B);
    double acc = 0.0;
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto a = static_cast<Eigen::Index>(actions[static_cast<std::size_t>(b)]);
        const double d = H[L](a, b) - targets(b);
        acc += d * d;
        dZ(a, b) = d / static_cast<double>(B);
    }
    grad.resize(static_cast<Eigen::Index>(num_params()));
    std::vector<Eigen::Index> offsets(L);
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < L; ++l) {
        offsets[l] = off;
        off += W_[l].size() + b_[l].size();
    }
    for (std::size_t l = L; l-- > 0;) {
        const Matrix gW = dZ * H[l].transpose();
        grad.segment(offsets[l], gW.size()) = Eigen::Map<const Vector>(gW.data(), gW.size());
        grad.segment(offsets[l] + gW.size(), b_[l].size()) = dZ.rowwise().sum();
        if (l > 0) {
            Matrix dH = W_[l].transpose() * dZ;
            dZ = (Z[l - 1].array() > 0.0).select(dH, 0.0);
        }
    }
    return 0.5 * acc / static_cast<double>(B);
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(Vector::Zero(static_cast<Eigen::Index>(n))),
      v_(Vector::Zero(static_cast<Eigen::Index>(n))) {}

void Adam::step(Vector& params, const Vector& grad) {
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

std::vector<double> NeuralQ::values_at(const Vector& e) const {
    const Matrix x = e.cwiseQuotient(input_scale);
    const Matrix out = net.forward(x);
    return {out.data(), out.data() + out.size()};
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, Eigen::Index dim)
    : states(dim, static_cast<Eigen::Index>(capacity)), next_states(dim, static_cast<Eigen::Index>(capacity)),
      actions(capacity), rewards(capacity), capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(const Vector& s, std::size_t a, double r, const Vector& s_next) {
    const auto col = static_cast<Eigen::Index>(head_);
    states.col(col) = s;
    next_states.col(col) = s_next;
    actions[head_] = a;
    rewards[head_] = r;
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
    if (batch > size_) throw std::invalid_argument("ReplayBuffer: batch larger than stored transitions");
    // Floyd's algorithm: distinct indices, each subset equally likely.
    std::unordered_set<std::size_t> chosen;
    std::vector<std::size_t> out;
    out.reserve(batch);
    for (std::size_t j = size_ - batch; j < size_; ++j) {
        const auto t = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(j + 1));
        const std::size_t pick = std::min(t, j);
        if (chosen.insert(pick).second) {
            out.push_back(pick);
        } else {
            chosen.insert(j);
            out.push_back(j);
        }
    }
    return out;
}

NeuralQ make_neural_q(const ErrorEnv& env, const RlConfig& cfg, const NetSpec& spec) {
    if (spec.hidden_layers < 0 || spec.hidden_units < 1) throw std::invalid_argument("NetSpec: bad architecture");
    std::vector<int> sizes{static_cast<int>(env.dim())};
    for (int l = 0; l < spec.hidden_layers; ++l) sizes.push_back(spec.hidden_units);
    sizes.push_back(static_cast<int>(env.num_actions()));
    Rng rng = make_rng(cfg.seed, 0, "net-init");
    NeuralQ q;
    q.net = Mlp(sizes, rng);
    q.input_scale = env.kalman().P_e.diagonal().cwiseMax(1e-300).cwiseSqrt();
    // Q values of order one: per-step reward in units of tr(P_e) / (1 - gamma)
    q.reward_scale = env.kalman().P_e.trace() / (1.0 - cfg.gamma);
    return q;
}

NeuralQ qnlfa_train(ErrorEnv env, const RlConfig& cfg, const NetSpec& spec, TrainStats* stats,
                    const NeuralCheckpoint& checkpoint) {
    cfg.validate();
    if (spec.batch < 1 || spec.target_refresh < 1 || spec.train_every < 1 ||
        spec.replay_capacity < static_cast<std::size_t>(spec.batch))
        throw std::invalid_argument("NetSpec: invalid replay/batch settings");
    NeuralQ q = make_neural_q(env, cfg, spec);
    Mlp target = q.net;
    Adam opt(q.net.num_params(), spec.learning_rate);
    ReplayBuffer replay(spec.replay_capacity, env.dim());
    Rng rng = make_rng(cfg.seed, 0, "train");
    Rng batch_rng = make_rng(cfg.seed, 0, "replay");
    const auto B = static_cast<std::size_t>(spec.batch);
    Matrix X(env.dim(), spec.batch), Xn(env.dim(), spec.batch);
    Vector y(spec.batch);
    std::vector<std::size_t> acts(B);
    Vector grad;
    std::uint64_t steps = 0, updates = 0;
    double last_loss = 0.0;
    const Vector inv_scale = q.input_scale.cwiseInverse();
    for (int ep = 0; ep < cfg.episodes; ++ep) {
        const double eps = cfg.epsilon.at(ep, cfg.episodes);
        env.reset(rng);
        for (int t = 0; t < cfg.horizon; ++t) {
            const Vector s = env.state();
            const std::size_t a = epsilon_greedy(q.values_at(s), eps, rng);
            const double r = env.step(a, rng);
            replay.push(s.cwiseProduct(inv_scale), a, r / q.reward_scale, env.state().cwiseProduct(inv_scale));
            ++steps;
            if (replay.size() < B || steps % static_cast<std::uint64_t>(spec.train_every) != 0) continue;
            const auto idx = replay.sample(B, batch_rng);
            for (std::size_t b = 0; b < B; ++b) {
                const auto col = static_cast<Eigen::Index>(idx[b]);
                X.col(static_cast<Eigen::Index>(b)) = replay.states.col(col);
                Xn.col(static_cast<Eigen::Index>(b)) = replay.next_states.col(col);
                acts[b] = replay.actions[idx[b]];
            }
            const Matrix qn = target.forward(Xn);
            for (std::size_t b = 0; b < B; ++b)
                y(static_cast<Eigen::Index>(b)) =
                    replay.rewards[idx[b]] + cfg.gamma * qn.col(static_cast<Eigen::Index>(b)).maxCoeff();
            last_loss = q.net.loss_and_grad(X, acts, y, grad);
            if (!std::isfinite(last_loss) || !grad.allFinite()) {
                std::ostringstream os;
                os << "Q-NLFA diverged at episode " << ep << " after " << updates << " updates: loss " << last_loss;
                throw DivergenceError(os.str());
            }
            Vector p = q.net.params();
            opt.step(p, grad);
            q.net.set_params(p);
            if (++updates % static_cast<std::uint64_t>(spec.target_refresh) == 0) target = q.net;
        }
        if (checkpoint && cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0)
            checkpoint(ep + 1, steps, q);
    }
    if (stats) {
        stats->episodes = cfg.episodes;
        stats->env_steps = steps;
        stats->updates = updates;
        stats->max_abs_weight = q.net.num_params() ? q.net.params().cwiseAbs().maxCoeff() : 0.0;
        stats->last_loss = last_loss;
    }
    return q;
}

}  // namespace cpsattack
