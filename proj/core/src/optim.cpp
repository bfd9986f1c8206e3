#include "splatmark/optim.hpp"

#include <cmath>

#include "splatmark/error.hpp"

namespace splatmark {

void Adam::step(std::vector<ad::Parameter>& params) {
  std::vector<ad::Parameter*> ptrs;
  ptrs.reserve(params.size());
  for (auto& p : params) ptrs.push_back(&p);
  step(std::move(ptrs));
}

void Adam::step(std::vector<ad::Parameter*> params) {
  if (m_.empty()) {
    for (const ad::Parameter* p : params) {
      m_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw InputError("adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    ad::Matrix g = p.grad;
    if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * p.value;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.value.array() -= cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

void Adam::restore(std::int64_t steps, std::vector<ad::Matrix> m, std::vector<ad::Matrix> v) {
  if (m.size() != v.size()) throw FormatError("adam: moment lists differ in length");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace splatmark
