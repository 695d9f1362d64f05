#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "insight/core/error.hpp"

namespace insight {

/// Expanded multivariate polynomial over n variables: like terms are combined
/// and coefficients are kept at full precision.
class Polynomial {
 public:
  using Exponents = std::vector<std::uint16_t>;

  Polynomial() = default;
  explicit Polynomial(std::size_t vars) : vars_(vars) {}

  static Polynomial constant(std::size_t vars, double c) {
    Polynomial p(vars);
    p.add_term(Exponents(vars, 0), c);
    return p;
  }
  static Polynomial variable(std::size_t vars, std::size_t index, double coeff = 1.0) {
    Polynomial p(vars);
    Exponents e(vars, 0);
    e.at(index) = 1;
    p.add_term(std::move(e), coeff);
    return p;
  }

  std::size_t vars() const noexcept { return vars_; }
  const std::map<Exponents, double>& terms() const noexcept { return terms_; }
  std::size_t size() const noexcept { return terms_.size(); }

  void add_term(Exponents e, double c) {
    if (e.size() != vars_) throw DimensionError("polynomial term has the wrong number of variables");
    if (c == 0.0) return;
    auto [it, fresh] = terms_.emplace(std::move(e), c);
    if (!fresh) {
      it->second += c;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  double coefficient(const Exponents& e) const {
    const auto it = terms_.find(e);
    return it == terms_.end() ? 0.0 : it->second;
  }

  unsigned degree() const {
    unsigned d = 0;
    for (const auto& [e, c] : terms_) d = std::max(d, static_cast<unsigned>(std::accumulate(e.begin(), e.end(), 0u)));
    return d;
  }

  Polynomial& operator+=(const Polynomial& o) {
    check(o);
    for (const auto& [e, c] : o.terms_) add_term(e, c);
    return *this;
  }
  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }

  Polynomial& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto& [e, c] : terms_) c *= s;
    return *this;
  }
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }

  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    a.check(b);
    Polynomial out(a.vars_);
    Exponents e(a.vars_);
    for (const auto& [ea, ca] : a.terms_)
      for (const auto& [eb, cb] : b.terms_) {
        for (std::size_t v = 0; v < e.size(); ++v) e[v] = static_cast<std::uint16_t>(ea[v] + eb[v]);
        out.add_term(e, ca * cb);
      }
    return out;
  }

  double eval(const std::vector<double>& x) const {
    if (x.size() != vars_) throw DimensionError("polynomial evaluated at a point of the wrong dimension");
    double total = 0;
    for (const auto& [e, c] : terms_) {
      double t = c;
      for (std::size_t v = 0; v < vars_; ++v)
        for (std::uint16_t k = 0; k < e[v]; ++k) t *= x[v];
      total += t;
    }
    return total;
  }

  /// Indices of variables appearing in a term with non-zero coefficient.
  std::vector<std::size_t> used_variables() const {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < vars_; ++v)
      for (const auto& [e, c] : terms_)
        if (e[v] > 0 && c != 0.0) {
          out.push_back(v);
          break;
        }
    return out;
  }

  friend bool operator==(const Polynomial&, const Polynomial&) = default;

 private:
  void check(const Polynomial& o) const {
    if (o.vars_ != vars_) throw DimensionError("polynomials over different variable sets");
  }

  std::size_t vars_ = 0;
  std::map<Exponents, double> terms_;
};

struct PrintOptions {
  int sig_digits = 2;
  /// Terms whose coefficient prints as 0.00 are left out of the text.
  double omit_below = 0.005;
};

inline std::string format_coefficient(double c, int sig_digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", sig_digits, c);
  return buf;
}

/// Terms in lexicographic order of exponents, with variables ranked by name
/// (higher powers of the alphabetically first variable lead; the constant
/// comes last). Written as `c*x**2*y - c2*z + c0`.
inline std::string to_string(const Polynomial& p, const std::vector<std::string>& names, PrintOptions opt = {}) {
  if (names.size() != p.vars()) throw DimensionError("variable names do not match the polynomial");
  std::vector<std::size_t> rank(names.size());
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return names[a] < names[b]; });
  std::vector<std::pair<const Polynomial::Exponents*, double>> terms;
  for (const auto& [e, c] : p.terms())
    if (std::abs(c) >= opt.omit_below) terms.emplace_back(&e, c);
  std::stable_sort(terms.begin(), terms.end(), [&](const auto& a, const auto& b) {
    for (std::size_t v : rank)
      if ((*a.first)[v] != (*b.first)[v]) return (*a.first)[v] > (*b.first)[v];
    return false;
  });
  if (terms.empty()) return "0";
  std::string out;
  for (const auto& [e, c] : terms) {
    const std::string mag = format_coefficient(std::abs(c), opt.sig_digits);
    if (out.empty()) {
      out += c < 0 ? "-" : "";
    } else {
      out += c < 0 ? " - " : " + ";
    }
    std::string body;
    for (std::size_t v : rank) {
      if ((*e)[v] == 0) continue;
      body += "*" + names[v];
      if ((*e)[v] > 1) body += "**" + std::to_string((*e)[v]);
    }
    out += mag + body;
  }
  return out;
}

}  // namespace insight
