#include "gava/optim.hpp"

#include <algorithm>
#include <cmath>

namespace gava {

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double clip = 1.0;
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params_)
      if (p.has_grad())
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    auto values = p.mutable_data();
    const bool has = p.has_grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has ? p.grad()[i] * clip : 0.0;
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      values[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

namespace {

double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kGradCheckFloor});
}

void note(GradCheckReport& r, double analytic, double numeric, const std::string& where) {
  const double rel = rel_error(analytic, numeric);
  r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic - numeric));
  if (rel > r.max_rel_error || r.checked == 0) {
    r.max_rel_error = rel;
    r.worst = where;
  }
  ++r.checked;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double tol, double h) {
  Tensor input = x.detach();
  input.set_requires_grad(true);
  clear_tape();
  backward(f(input));
  std::vector<double> analytic(input.size(), 0.0);
  if (input.has_grad()) std::copy(input.grad().begin(), input.grad().end(), analytic.begin());

  GradCheckReport report;
  NoGradGuard guard;
  auto values = input.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double up = f(input).item();
    values[i] = orig - h;
    const double down = f(input).item();
    values[i] = orig;
    note(report, analytic[i], (up - down) / (2.0 * h), "x[" + std::to_string(i) + "]");
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

GradCheckReport grad_check_params(const std::function<Tensor()>& f, std::vector<NamedTensor> params, double tol,
                                  double h, std::size_t max_entries_per_tensor) {
  for (auto& p : params) p.value.zero_grad();
  clear_tape();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    std::vector<double> g(p.value.size(), 0.0);
    if (p.value.has_grad()) std::copy(p.value.grad().begin(), p.value.grad().end(), g.begin());
    analytic.push_back(std::move(g));
    p.value.zero_grad();
  }

  GradCheckReport report;
  NoGradGuard guard;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].value.mutable_data();
    std::size_t stride = 1;
    if (max_entries_per_tensor > 0 && values.size() > max_entries_per_tensor)
      stride = (values.size() + max_entries_per_tensor - 1) / max_entries_per_tensor;
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = f().item();
      values[i] = orig - h;
      const double down = f().item();
      values[i] = orig;
      note(report, analytic[k][i], (up - down) / (2.0 * h), params[k].name + "[" + std::to_string(i) + "]");
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace gava
