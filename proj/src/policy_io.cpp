#include "cpsattack/policy_io.hpp"

#include <cstring>
#include <fstream>

namespace cpsattack {

namespace {

std::string convention_name(GridConvention c) { return c == GridConvention::node ? "node" : "cell_center"; }

GridConvention convention_from(const std::string& s) {
    if (s == "node") return GridConvention::node;
    if (s == "cell_center") return GridConvention::cell_center;
    throw std::invalid_argument("unknown grid convention '" + s + "'");
}

class ValuePolicy final : public AttackPolicy {
  public:
    ValuePolicy(ValueFunctionPolicy vfp, ErrorGrid grid, ActionSet actions)
        : vfp_(std::move(vfp)), grid_(std::move(grid)) {
        actions_ = std::move(actions);
    }
    std::size_t act(const Vector& e, int t) const override { return vfp_.action(grid_.cell_of(e), t); }
    std::string kind() const override { return "value_iteration"; }

  private:
    ValueFunctionPolicy vfp_;
    ErrorGrid grid_;
};

class TabularPolicy final : public AttackPolicy {
  public:
    TabularPolicy(QTable q, ErrorGrid grid, ActionSet actions) : q_(std::move(q)), grid_(std::move(grid)) {
        actions_ = std::move(actions);
    }
    std::size_t act(const Vector& e, int) const override { return argmax_first(q_.row(grid_.cell_of(e))); }
    std::string kind() const override { return "q_tabular"; }

  private:
    QTable q_;
    ErrorGrid grid_;
};

class LinearPolicy final : public AttackPolicy {
  public:
    LinearPolicy(LinearQ q, ActionSet actions) : q_(std::move(q)) { actions_ = std::move(actions); }
    std::size_t act(const Vector& e, int) const override { return q_.greedy(e); }
    std::string kind() const override { return "qlfa"; }

  private:
    LinearQ q_;
};

class NeuralPolicy final : public AttackPolicy {
  public:
    NeuralPolicy(NeuralQ q, ActionSet actions) : q_(std::move(q)) { actions_ = std::move(actions); }
    std::size_t act(const Vector& e, int) const override { return q_.greedy(e); }
    std::string kind() const override { return "qnlfa"; }

  private:
    NeuralQ q_;
};

std::vector<std::size_t> index_list(const Json& j) { return j.get<std::vector<std::size_t>>(); }

}  // namespace

Json grid_to_json(const ErrorGrid& grid) {
    return {{"lower", vector_to_json(grid.lower())},
            {"upper", vector_to_json(grid.upper())},
            {"levels", grid.levels()},
            {"convention", convention_name(grid.convention())}};
}

ErrorGrid grid_from_json(const Json& j) {
    return ErrorGrid(vector_from_json(j.at("lower"), "lower"), vector_from_json(j.at("upper"), "upper"),
                     j.at("levels").get<int>(), convention_from(j.value("convention", std::string("cell_center"))));
}

Json actions_to_json(const ActionSet& set) {
    Json acts = Json::array();
    for (const auto& a : set.actions) acts.push_back(vector_to_json(a));
    return {{"vectors", acts}, {"a_max", set.a_max}, {"norm", set.norm == AttackNorm::l2 ? "l2" : "linf"}};
}

ActionSet actions_from_json(const Json& j) {
    ActionSet set;
    for (const auto& a : j.at("vectors")) set.actions.push_back(vector_from_json(a, "action"));
    set.a_max = j.at("a_max").get<double>();
    set.norm = j.value("norm", std::string("l2")) == "linf" ? AttackNorm::linf : AttackNorm::l2;
    check_action_set(set);
    return set;
}

void save_value_policy(const std::string& path, const ValueFunctionPolicy& vfp, const ErrorGrid& grid,
                       const ActionSet& actions, const std::string& config_hash) {
    Json j;
    j["format"] = "cpsattack-vi-policy-v1";
    if (!config_hash.empty()) j["config_sha256"] = config_hash;
    j["grid"] = grid_to_json(grid);
    j["actions"] = actions_to_json(actions);
    j["mode"] = vfp.mode == HorizonMode::finite ? "finite" : "discounted";
    j["horizon"] = vfp.horizon;
    j["gamma"] = vfp.gamma;
    j["policy"] = vfp.policy;
    j["stage_policies"] = vfp.stage_policies;
    j["V"] = vector_to_json(vfp.V);
    write_json_file(path, j);
}

void save_tabular_policy(const std::string& path, const QTable& q, const ErrorGrid& grid, const ActionSet& actions,
                         const std::string& config_hash) {
    Json rows = Json::array();
    for (std::size_t s = 0; s < q.states(); ++s) rows.push_back(q.row(s));
    Json j;
    j["format"] = "cpsattack-qtable-v1";
    if (!config_hash.empty()) j["config_sha256"] = config_hash;
    j["grid"] = grid_to_json(grid);
    j["actions"] = actions_to_json(actions);
    j["q"] = rows;
    write_json_file(path, j);
}

void save_linear_policy(const std::string& path, const LinearQ& q, const ActionSet& actions,
                        const std::string& config_hash) {
    Json j;
    j["format"] = "cpsattack-linearq-v1";
    if (!config_hash.empty()) j["config_sha256"] = config_hash;
    j["encoder"] = {{"kind", q.encoder().kind == EncoderKind::fsr ? "fsr" : "joint_one_hot"},
                    {"grid", grid_to_json(q.encoder().grid)}};
    j["actions"] = actions_to_json(actions);
    j["theta"] = matrix_to_json(q.theta());
    write_json_file(path, j);
}

void save_neural_policy(const std::string& path, const NeuralQ& q, const ActionSet& actions,
                        const std::string& config_hash) {
    const Vector p = q.net.params();
    Json h;
    h["format"] = "cpsattack-mlp-v1";
    if (!config_hash.empty()) h["config_sha256"] = config_hash;
    h["layers"] = q.net.sizes();
    h["activation"] = "relu";
    h["input_scale"] = vector_to_json(q.input_scale);
    h["reward_scale"] = q.reward_scale;
    h["param_count"] = p.size();
    h["actions"] = actions_to_json(actions);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << h.dump() << '\n';
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        unsigned char buf[8];
        std::uint64_t bits;
        const double x = p(i);
        std::memcpy(&bits, &x, 8);
        for (int k = 0; k < 8; ++k) buf[k] = static_cast<unsigned char>(bits >> (8 * k));
        out.write(reinterpret_cast<const char*>(buf), 8);
    }
}

NeuralQ load_neural_q(const std::string& path, ActionSet* actions) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open policy " + path);
    std::string header;
    std::getline(in, header);
    const Json h = Json::parse(header);
    if (h.at("format") != "cpsattack-mlp-v1") throw std::runtime_error(path + ": not a neural policy file");
    const auto count = h.at("param_count").get<Eigen::Index>();
    Vector p(count);
    for (Eigen::Index i = 0; i < count; ++i) {
        unsigned char buf[8];
        if (!in.read(reinterpret_cast<char*>(buf), 8)) throw std::runtime_error(path + ": truncated weight blob");
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(buf[k]) << (8 * k);
        double x;
        std::memcpy(&x, &bits, 8);
        p(i) = x;
    }
    NeuralQ q;
    q.net = Mlp(h.at("layers").get<std::vector<int>>(), p);
    q.input_scale = vector_from_json(h.at("input_scale"), "input_scale");
    q.reward_scale = h.at("reward_scale").get<double>();
    if (actions) *actions = actions_from_json(h.at("actions"));
    return q;
}

LinearQ load_linear_q(const std::string& path, ActionSet* actions) {
    const Json j = read_json_file(path);
    if (j.at("format") != "cpsattack-linearq-v1") throw std::runtime_error(path + ": not a linear policy file");
    FsrEncoder enc{grid_from_json(j.at("encoder").at("grid")),
                   j.at("encoder").at("kind") == "fsr" ? EncoderKind::fsr : EncoderKind::joint_one_hot};
    const Matrix theta = matrix_from_json(j.at("theta"), "theta");
    LinearQ q(enc, static_cast<std::size_t>(theta.cols()));
    require_dims(theta.rows() == q.theta().rows(), "linear policy: theta rows do not match the encoder");
    q.theta() = theta;
    if (actions) *actions = actions_from_json(j.at("actions"));
    return q;
}

std::unique_ptr<AttackPolicy> make_value_policy(ValueFunctionPolicy vfp, ErrorGrid grid, ActionSet actions) {
    return std::make_unique<ValuePolicy>(std::move(vfp), std::move(grid), std::move(actions));
}
std::unique_ptr<AttackPolicy> make_linear_policy(LinearQ q, ActionSet actions) {
    return std::make_unique<LinearPolicy>(std::move(q), std::move(actions));
}
std::unique_ptr<AttackPolicy> make_neural_policy(NeuralQ q, ActionSet actions) {
    return std::make_unique<NeuralPolicy>(std::move(q), std::move(actions));
}
std::unique_ptr<AttackPolicy> make_tabular_policy(QTable q, ErrorGrid grid, ActionSet actions) {
    return std::make_unique<TabularPolicy>(std::move(q), std::move(grid), std::move(actions));
}

std::unique_ptr<AttackPolicy> load_policy(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("missing policy artifact: " + path);
    std::string first;
    std::getline(in, first);
    if (first.find("cpsattack-mlp-v1") != std::string::npos) {
        ActionSet acts;
        NeuralQ q = load_neural_q(path, &acts);
        return make_neural_policy(std::move(q), std::move(acts));
    }
    const Json j = read_json_file(path);
    const std::string fmt = j.value("format", "");
    if (fmt == "cpsattack-vi-policy-v1") {
        ValueFunctionPolicy vfp;
        vfp.mode = j.at("mode") == "finite" ? HorizonMode::finite : HorizonMode::discounted;
        vfp.horizon = j.at("horizon").get<int>();
        vfp.gamma = j.at("gamma").get<double>();
        vfp.policy = index_list(j.at("policy"));
        for (const auto& st : j.at("stage_policies")) vfp.stage_policies.push_back(index_list(st));
        vfp.V = vector_from_json(j.at("V"), "V");
        return make_value_policy(std::move(vfp), grid_from_json(j.at("grid")), actions_from_json(j.at("actions")));
    }
    if (fmt == "cpsattack-qtable-v1") {
        const ErrorGrid grid = grid_from_json(j.at("grid"));
        const auto& rows = j.at("q");
        QTable q(rows.size(), rows.empty() ? 0 : rows.at(0).size());
        for (std::size_t s = 0; s < rows.size(); ++s)
            for (std::size_t a = 0; a < q.actions(); ++a) q.at(s, a) = rows.at(s).at(a).get<double>();
        return make_tabular_policy(std::move(q), grid, actions_from_json(j.at("actions")));
    }
    if (fmt == "cpsattack-linearq-v1") {
        ActionSet acts;
        LinearQ q = load_linear_q(path, &acts);
        return make_linear_policy(std::move(q), std::move(acts));
    }
    throw std::runtime_error(path + ": unknown policy format '" + fmt + "'");
}

}  // namespace cpsattack
