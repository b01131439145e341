// Copyright 2026 The GEM Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "gem/errors.hpp"

namespace gem {

/// Adam with bias correction.
class Adam {
   public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    }

    void step(const std::vector<Eigen::MatrixXd *> &params, const std::vector<const Eigen::MatrixXd *> &grads) {
        require(params.size() == grads.size(), "Adam: parameter/gradient count mismatch");
        if (m_.empty()) {
            for (auto *p : params) {
                m_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
                v_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
            }
        }
        require(m_.size() == params.size(), "Adam: parameter set changed between steps");
        t_++;
        double c1 = 1 - std::pow(beta1_, t_);
        double c2 = 1 - std::pow(beta2_, t_);
        for (size_t k = 0; k < params.size(); k++) {
            const auto &g = *grads[k];
            m_[k] = beta1_ * m_[k] + (1 - beta1_) * g;
            v_[k] = beta2_ * v_[k] + (1 - beta2_) * g.cwiseProduct(g);
            params[k]->array() -= lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
        }
    }

    int steps() const {
        return t_;
    }

   private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<Eigen::MatrixXd> m_, v_;
};

}  // namespace gem
