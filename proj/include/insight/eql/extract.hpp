#pragma once

#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "insight/eql/model.hpp"
#include "insight/eql/polynomial.hpp"

namespace insight {

inline constexpr std::size_t kMaxExtractedTerms = 200000;
inline constexpr std::size_t kMaxExpansionWork = 20000000;

/// Symbolic composition of the network: one expanded polynomial per output
/// logit (temperature included), in output order.
template <typename S>
std::vector<Polynomial> extract(const EqlParams<S>& params, const EqlConfig& c) {
  params.check(c);
  const EqlParams<double> p = params.template cast<double>();
  const std::size_t n = c.input_dim;
  std::vector<Polynomial> z;
  for (std::size_t v = 0; v < n; ++v) z.push_back(Polynomial::variable(n, v));
  const auto units = eql_units(c);

  const auto affine = [&](const Tensor<double>& w, const Tensor<double>& b, std::size_t row) {
    Polynomial g = Polynomial::constant(n, b[row]);
    const std::size_t cols = w.dim(1);
    for (std::size_t j = 0; j < cols; ++j)
      if (w[row * cols + j] != 0.0) g += z[j] * w[row * cols + j];
    return g;
  };
  const auto guard = [&](const Polynomial& q, std::size_t layer) {
    if (q.size() > kMaxExtractedTerms) {
      throw ExtractionError("expansion of EQL layer " + std::to_string(layer) + " exceeds " +
                            std::to_string(kMaxExtractedTerms) + " terms; prune harder or use fewer layers");
    }
  };

  std::size_t layer = 0;
  const auto mul = [&](const Polynomial& a, const Polynomial& b) {
    if (a.size() * b.size() > kMaxExpansionWork) {
      throw ExtractionError("expansion of EQL layer " + std::to_string(layer) + " needs " +
                            std::to_string(a.size()) + "x" + std::to_string(b.size()) +
                            " term products; prune harder or use fewer layers");
    }
    return a * b;
  };

  for (std::size_t k = 0; k < c.hidden_layers; ++k, ++layer) {
    std::vector<Polynomial> g;
    for (std::size_t r = 0; r < c.pre_width(); ++r) {
      g.push_back(affine(p.w[k], p.b[k], r));
    }
    std::vector<Polynomial> next;
    for (const auto& u : units) {
      switch (u.fn) {
        case EqlFn::Square: next.push_back(mul(g[u.in0], g[u.in0])); break;
        case EqlFn::Cube: next.push_back(mul(mul(g[u.in0], g[u.in0]), g[u.in0])); break;
        case EqlFn::Constant: next.push_back(Polynomial::constant(n, p.b[k][u.in0])); break;
        case EqlFn::Identity: next.push_back(g[u.in0]); break;
        case EqlFn::Multiply: next.push_back(mul(g[u.in0], g[u.in1])); break;
        case EqlFn::Add: next.push_back(g[u.in0] + g[u.in1]); break;
        default: throw ExtractionError("EQL activation " + to_string(u.fn) + " has no polynomial form");
      }
      guard(next.back(), k);
    }
    z = std::move(next);
  }
  std::vector<Polynomial> logits;
  for (std::size_t r = 0; r < c.output_dim(); ++r) {
    logits.push_back(affine(p.w.back(), p.b.back(), r) * c.temperature);
    guard(logits.back(), c.hidden_layers);
  }
  return logits;
}

/// logits_<action><g> with g counted from 1, in output order.
inline std::vector<std::string> logit_names(const std::vector<std::string>& actions, std::size_t per_action) {
  std::vector<std::string> out;
  for (const auto& a : actions)
    for (std::size_t g = 1; g <= per_action; ++g) out.push_back("logits_" + a + std::to_string(g));
  return out;
}

/// An extracted policy, ready for printing and export.
struct SymbolicPolicy {
  double temperature = 10.0;
  std::size_t logits_per_action = 2;
  std::vector<std::string> variables;
  std::vector<std::string> actions;
  std::vector<Polynomial> logits;

  std::vector<std::string> names() const { return logit_names(actions, logits_per_action); }

  /// Indices of input variables that survive in any logit.
  std::vector<std::size_t> used_variables() const {
    std::vector<bool> used(variables.size(), false);
    for (const auto& l : logits)
      for (std::size_t v : l.used_variables()) used[v] = true;
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < used.size(); ++v)
      if (used[v]) out.push_back(v);
    return out;
  }
};

template <typename S>
SymbolicPolicy make_symbolic_policy(const EqlParams<S>& p, const EqlConfig& c, std::vector<std::string> variables,
                                    std::vector<std::string> actions) {
  if (variables.size() != c.input_dim) throw ExtractionError("variable names do not match the EQL input width");
  if (actions.size() != c.actions) throw ExtractionError("action names do not match the EQL action count");
  SymbolicPolicy s;
  s.temperature = c.temperature;
  s.logits_per_action = c.logits_per_action;
  s.variables = std::move(variables);
  s.actions = std::move(actions);
  s.logits = extract(p, c);
  return s;
}

/// "action_noop = [exp(logits_noop1) + exp(logits_noop2)] / sum(exp(logits))"
inline std::string probability_formula(const std::string& action, std::size_t per_action) {
  std::string terms;
  for (std::size_t g = 1; g <= per_action; ++g) {
    if (g > 1) terms += " + ";
    terms += "exp(logits_" + action + std::to_string(g) + ")";
  }
  if (per_action > 1) terms = "[" + terms + "]";
  return "action_" + action + " = " + terms + " / sum(exp(logits))";
}

/// "logits_noop1 = ..." lines separated by blank lines.
inline std::string logits_text(const SymbolicPolicy& s, PrintOptions opt = {}) {
  const auto names = s.names();
  std::string out;
  for (std::size_t i = 0; i < s.logits.size(); ++i) {
    if (i) out += "\n\n";
    out += names[i] + " = " + to_string(s.logits[i], s.variables, opt);
  }
  return out;
}

inline std::string probabilities_text(const SymbolicPolicy& s) {
  std::string out;
  for (std::size_t a = 0; a < s.actions.size(); ++a) {
    if (a) out += "\n\n";
    out += probability_formula(s.actions[a], s.logits_per_action);
  }
  return out;
}

/// Table-style plain text: the logits section then the probability section.
inline std::string policy_text(const SymbolicPolicy& s, PrintOptions opt = {}) {
  return "## Logits\n\n" + logits_text(s, opt) + "\n\n\n## The Probability of Actions\n\n" + probabilities_text(s) + "\n";
}

inline nlohmann::json policy_json(const SymbolicPolicy& s) {
  nlohmann::json logits = nlohmann::json::array();
  const auto names = s.names();
  for (std::size_t i = 0; i < s.logits.size(); ++i) {
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& [e, c] : s.logits[i].terms()) {
      nlohmann::json powers = nlohmann::json::array();
      for (std::size_t v = 0; v < e.size(); ++v)
        if (e[v]) powers.push_back({s.variables[v], e[v]});
      terms.push_back({{"coeff", c}, {"powers", powers}});
    }
    logits.push_back({{"name", names[i]}, {"action", s.actions[i / s.logits_per_action]}, {"terms", terms}});
  }
  return {{"schema", "eql-policy-v1"},
          {"t_eql", s.temperature},
          {"logits_per_action", s.logits_per_action},
          {"variables", s.variables},
          {"actions", s.actions},
          {"logits", logits}};
}

inline SymbolicPolicy policy_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema") != "eql-policy-v1") throw FormatError("unknown policy schema " + j.at("schema").dump());
    SymbolicPolicy s;
    s.temperature = j.at("t_eql").get<double>();
    s.logits_per_action = j.at("logits_per_action").get<std::size_t>();
    s.variables = j.at("variables").get<std::vector<std::string>>();
    s.actions = j.at("actions").get<std::vector<std::string>>();
    const std::size_t n = s.variables.size();
    for (const auto& l : j.at("logits")) {
      Polynomial p(n);
      for (const auto& t : l.at("terms")) {
        Polynomial::Exponents e(n, 0);
        for (const auto& pw : t.at("powers")) {
          const auto name = pw.at(0).get<std::string>();
          const auto it = std::find(s.variables.begin(), s.variables.end(), name);
          if (it == s.variables.end()) throw FormatError("policy term uses undeclared variable " + name);
          e[static_cast<std::size_t>(it - s.variables.begin())] = pw.at(1).get<std::uint16_t>();
        }
        p.add_term(std::move(e), t.at("coeff").get<double>());
      }
      s.logits.push_back(std::move(p));
    }
    if (s.logits.size() != s.actions.size() * s.logits_per_action) throw FormatError("policy logit count mismatch");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed policy JSON: ") + e.what());
  }
}

}  // namespace insight
