#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "insight/core/error.hpp"
#include "insight/core/tape.hpp"
#include "insight/eql/extract.hpp"
#include "insight/eql/model.hpp"
#include "insight/explain/task.hpp"

namespace insight {

/// The printable form of an extracted policy.
struct PolicyDescription {
  std::vector<std::string> variables;
  std::vector<std::string> actions;
  std::string logits;         // "logits_noop1 = ..." lines
  std::string probabilities;  // "action_noop = ..." lines

  static PolicyDescription from(const SymbolicPolicy& s, PrintOptions opt = {}) {
    return {s.variables, s.actions, logits_text(s, opt), probabilities_text(s)};
  }
};

/// ∂ ln π_EQL(action | x) / ∂ x_v for every input variable, evaluated on the
/// coordinate vector that reaches the EQL actor.
template <typename S>
std::vector<double> grad_loglik(const EqlParams<S>& params, const EqlConfig& c, const std::vector<double>& coords,
                                std::size_t action) {
  if (coords.size() != c.input_dim) {
    throw DimensionError("grad_loglik: expected " + std::to_string(c.input_dim) + " coordinates, got " +
                         std::to_string(coords.size()));
  }
  if (action >= c.actions) throw ContractError("grad_loglik: action index out of range");
  const EqlParams<double> p = params.template cast<double>();
  Tape<double> tape;
  Binding<double> bind(tape, false);
  Tensor<double> x0(Shape{1, coords.size()});
  for (std::size_t i = 0; i < coords.size(); ++i) x0[i] = coords[i];
  const Var<double> x = tape.parameter(x0);
  const Var<double> lp = ad::sum(ad::gather(eql_log_probs(p, c, bind, x), {action}));
  tape.backward(lp);
  const Tensor<double> gx = tape.grad(x);
  std::vector<double> g(gx.data().begin(), gx.data().end());
  for (double v : g)
    if (!std::isfinite(v)) throw NumericError("grad_loglik: non-finite gradient");
  return g;
}

/// The inputs and outcome of one decision, plus the attribution gradients.
struct DecisionContext {
  std::vector<std::string> variables;  // printed names, in print order
  std::vector<double> values;
  std::string action;
  std::vector<double> gradients;

  void check() const {
    if (values.size() != variables.size() || gradients.size() != variables.size()) {
      throw DimensionError("decision context: names, values and gradients differ in length");
    }
  }
};

inline nlohmann::json decision_context_json(const DecisionContext& d) {
  d.check();
  return {{"action", d.action}, {"variables", d.variables}, {"values", d.values}, {"gradients", d.gradients}};
}

inline DecisionContext decision_context_from_json(const nlohmann::json& j) {
  try {
    DecisionContext d;
    d.action = j.at("action").get<std::string>();
    d.variables = j.at("variables").get<std::vector<std::string>>();
    d.values = j.at("values").get<std::vector<double>>();
    d.gradients = j.at("gradients").get<std::vector<double>>();
    d.check();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed decision context: ") + e.what());
  }
}

/// Context for the decision `action` at EQL input `coords`. Only variables
/// that appear in the extracted policy are listed, in input order; all
/// variables are listed when the policy uses none.
template <typename S>
DecisionContext make_decision_context(const EqlParams<S>& params, const EqlConfig& c, const SymbolicPolicy& policy,
                                      const std::vector<double>& coords, std::size_t action) {
  if (action >= policy.actions.size()) throw ContractError("decision context: action index out of range");
  const auto g = grad_loglik(params, c, coords, action);
  auto shown = policy.used_variables();
  if (shown.empty())
    for (std::size_t v = 0; v < coords.size(); ++v) shown.push_back(v);
  DecisionContext d;
  d.action = policy.actions[action];
  for (std::size_t v : shown) {
    d.variables.push_back(policy.variables.at(v));
    d.values.push_back(coords[v]);
    d.gradients.push_back(g[v]);
  }
  return d;
}

/// Shortest decimal that reads back to the same double, with a trailing
/// ".0" on integral values ("1.0", "0.9018810391426086").
inline std::string format_value(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, r.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

/// Three significant digits in scientific notation ("2.75e-04").
inline std::string format_gradient(double g) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", g);
  return buf;
}

/// Shared opening: task, actions, input convention and the policy itself.
inline std::string render_public_prompt(const TaskDescription& task, const PolicyDescription& policy) {
  std::string s;
  s += "You need to help a user analyse a control policy for the task " + task.name +
       ". The policy was trained with deep reinforcement learning.\n";
  s += "Start by understanding the goal of the task and the policy.\n\n\n";
  s += "# task Description\n\n" + task.goal + "\n\n";
  s += "The task proceeds in discrete steps. At every step the agent receives the task screen and must take one of the " +
       detail::count_word(task.actions.size()) + " actions:\n\n";
  for (const auto& a : task.actions) s += "* " + a.name + ": " + a.effect + "\n";
  s += "\n\n# The policy\n\n## Input Variable\n\n";
  s += task.coordinate_system + " " + frames_statement(task.frames) + "\n\n";
  std::vector<std::string> objects;
  for (const auto& o : task.objects) objects.push_back("the " + o);
  s += "The objects of interest are " + detail::join_with_and(objects) +
       ". Input variables follow the naming convention [x/y]_object_frame. For example, x_" + task.example_object +
       "_1 is the x coordinate of the " + task.example_object +
       " at frame 1. Keep in mind that every input variable is an object coordinate in the range [0,1].\n\n\n";
  s += "## Logits\n\n" + policy.logits + "\n\n\n";
  s += "## The Probability of Actions\n\n" + policy.probabilities + "\n";
  return s;
}

namespace detail {

inline std::size_t action_index(const PolicyDescription& policy, const std::string& action) {
  for (std::size_t a = 0; a < policy.actions.size(); ++a)
    if (policy.actions[a] == action) return a;
  throw ContractError("unknown action '" + action + "' for this policy");
}

inline const char* kLatexRules =
    "Write the equations in LaTeX. Use object names and frame indices as subscripts, for example "
    "y_\\text{agent,1}, and action names as the subscript of logits, for example logits_\\text{noop}. Keep two "
    "significant digits for every number.";

inline std::string example_variable(const PolicyDescription& policy) {
  return policy.variables.size() > 1 ? policy.variables[1] : policy.variables.empty() ? "x_agent_1" : policy.variables[0];
}

}  // namespace detail

/// User turns of the policy-interpretation dialogue: the public prompt with
/// the analysis rules and the first action, one turn per further action,
/// then the summary request with a recap. With `action` set, only that
/// action is analysed.
inline std::vector<std::string> render_policy_prompt(const TaskDescription& task, const PolicyDescription& policy,
                                                     const std::optional<std::string>& action = std::nullopt) {
  if (policy.actions.empty()) throw ContractError("policy prompt: the policy has no actions");
  std::vector<std::string> order;
  if (action) {
    detail::action_index(policy, *action);
    order.push_back(*action);
  } else {
    order = policy.actions;
  }
  const std::string pub = render_public_prompt(task, policy);
  const std::string first_logit = "logits_" + order.front() + "1";
  std::string rules;
  rules += "# Your Task\n";
  rules += "Analyse this policy through its mathematical properties, following the rules below.\n\n";
  rules +=
      "1. You may draw on your own knowledge of the task's goal, but every conclusion about the policy must rest on "
      "its mathematical properties.\n\n";
  rules +=
      "2. Work in three steps: (a) how changes in the variables move the action logits, (b) how changes in the "
      "logits move the action probabilities, and (c) a summary of how the input variables influence the action "
      "probabilities.\n\n";
  rules +=
      "3. In step (a), remember that each input variable is the location of an object and lies in [0,1]. Look at "
      "the coefficient of every input variable and at any constants.\n\n";
  rules += "4. In step (b), remember that the action probabilities sum to one.\n\n";
  rules +=
      "5. Raising the logit of an action tends to raise its probability, and lowering it tends to lower its "
      "probability.\n\n";
  rules += "6. In step (c), summarise what you found in (a) and (b).\n\n";
  rules += "For example, for " + first_logit + ", start from the coefficient of " + detail::example_variable(policy) +
           ". Given that its values lie in [0,1], how does it move the logit, and how does that move the probability "
           "of the action?\n\n";
  rules += "7. Be specific about the effect of each term.\n\n";
  rules += "## Output\n";
  rules += "Organize your response as (1) equation, (2) influential variables, and (3) analysis. ";
  rules += std::string(detail::kLatexRules) + "\n\n";

  std::vector<std::string> turns;
  turns.push_back(pub + "\n\n" + rules + "Now, analyze action " + order.front() + ".");
  for (std::size_t i = 1; i < order.size(); ++i) turns.push_back("Analyze action " + order[i] + ".");
  std::string summary = "Provide a summary of your analysis so far, following these rules.\n\n";
  summary += "1. State specifically when the agent chooses each action.\n";
  summary += "2. Keep the summary consistent with your analysis.\n";
  summary += "3. Format the response in markdown.\n\n";
  summary += "Here is a recap of the setup.\n\n" + pub;
  turns.push_back(std::move(summary));
  return turns;
}

/// Public prompt followed by one decision: every listed variable's value and
/// gradient, interleaved, then the output rules.
inline std::string render_decision_prompt(const TaskDescription& task, const PolicyDescription& policy,
                                          const DecisionContext& context) {
  context.check();
  detail::action_index(policy, context.action);
  std::string s = render_public_prompt(task, policy) + "\n\n";
  s += "# Your Task\n";
  s += "This policy was used to play the task and we recorded some of its decisions. Explain why the agent took a "
       "specific action when the input variables had specific values.\n\n";
  s += "The action taken by the agent is " + context.action + ".\n";
  for (std::size_t v = 0; v < context.variables.size(); ++v) {
    const auto& name = context.variables[v];
    s += "The value of " + name + " is " + format_value(context.values[v]) + "\n";
    s += "The gradient of the log-likelihood for action " + context.action + " with respect to " + name + " is " +
         format_gradient(context.gradients[v]) + ".\n";
  }
  s += "\n## Output\n\n";
  s += "Give a concise explanation of why the agent took this action given these input values. For example, does "
       "the action help the agent earn a point?\n\n";
  s += "Follow these rules.\n";
  s += "1. Be specific. Explain why the action " + context.action + " is preferred over the other actions.\n";
  s += "2. Keep the explanation easy to read.\n";
  s += "3. The explanation must be entirely based on the equations for the policy, the values of input variables, and the "
       "gradients of action log-likelihood with respect to input variables.\n";
  s += "4. Stay consistent with the definition of the input variables and the coordinate system.\n\n";
  s += std::string(detail::kLatexRules) + "\n";
  return s;
}

}  // namespace insight
