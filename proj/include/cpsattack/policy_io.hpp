#pragma once

#include "cpsattack/attack_mdp.hpp"
#include "cpsattack/attack_rl.hpp"

#include <memory>
#include <string>

namespace cpsattack {

/// A trained or solved attack policy with its action set, loadable from disk.
class AttackPolicy {
  public:
    virtual ~AttackPolicy() = default;
    /// Action index for error estimate e at stage t (0-based).
    virtual std::size_t act(const Vector& e, int t) const = 0;
    virtual std::string kind() const = 0;
    const ActionSet& actions() const { return actions_; }

  protected:
    ActionSet actions_;
};

Json grid_to_json(const ErrorGrid& grid);
ErrorGrid grid_from_json(const Json& j);
Json actions_to_json(const ActionSet& set);
ActionSet actions_from_json(const Json& j);

// `config_hash`, when given, is stored alongside the policy.
void save_value_policy(const std::string& path, const ValueFunctionPolicy& vfp, const ErrorGrid& grid,
                       const ActionSet& actions, const std::string& config_hash = "");
void save_tabular_policy(const std::string& path, const QTable& q, const ErrorGrid& grid, const ActionSet& actions,
                         const std::string& config_hash = "");
void save_linear_policy(const std::string& path, const LinearQ& q, const ActionSet& actions,
                        const std::string& config_hash = "");
/// One JSON header line, a newline, then the parameters as little-endian doubles.
void save_neural_policy(const std::string& path, const NeuralQ& q, const ActionSet& actions,
                        const std::string& config_hash = "");

NeuralQ load_neural_q(const std::string& path, ActionSet* actions = nullptr);
LinearQ load_linear_q(const std::string& path, ActionSet* actions = nullptr);

/// Dispatches on the format tag stored in the file.
std::unique_ptr<AttackPolicy> load_policy(const std::string& path);

std::unique_ptr<AttackPolicy> make_value_policy(ValueFunctionPolicy vfp, ErrorGrid grid, ActionSet actions);
std::unique_ptr<AttackPolicy> make_linear_policy(LinearQ q, ActionSet actions);
std::unique_ptr<AttackPolicy> make_neural_policy(NeuralQ q, ActionSet actions);
std::unique_ptr<AttackPolicy> make_tabular_policy(QTable q, ErrorGrid grid, ActionSet actions);

}  // namespace cpsattack
