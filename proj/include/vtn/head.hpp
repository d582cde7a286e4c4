#pragma once

#include <string>

#include "vtn/model_config.hpp"
#include "vtn/nn.hpp"
#include "vtn/tensor.hpp"

namespace vtn {

// Classification head over the final cls state: layer norm -> linear ->
// GELU -> dropout -> linear.
template <class S>
struct ClassifierHead {
  HeadConfig cfg;
  Tensor<S> ln_gamma, ln_beta;
  Dense<S> fc_in, fc_out;

  void init(const HeadConfig& config, Rng& rng) {
    config.validate();
    cfg = config;
    ln_gamma = Tensor<S>::full({cfg.input_size}, S(1)).set_requires_grad(true);
    ln_beta = Tensor<S>::zeros({cfg.input_size});
    ln_beta.set_requires_grad(true);
    fc_in.init_normal(cfg.input_size, cfg.mlp_size, rng, 0.02);
    fc_out.init_normal(cfg.mlp_size, cfg.num_classes, rng, 0.02);
  }

  // cls_state: [rows x d] (one row per sequence) -> logits [rows x classes].
  Tensor<S> forward(const Tensor<S>& cls_state, Mode mode, Rng& rng) const {
    if (cls_state.cols() != cfg.input_size)
      throw std::invalid_argument("head: input width mismatch");
    auto x = layer_norm(cls_state, ln_gamma, ln_beta, S(1e-5));
    x = gelu(fc_in.forward(x));
    x = dropout(x, cfg.dropout, mode == Mode::Train, rng);
    return fc_out.forward(x);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& visit) {
    visit(prefix + ".ln.gamma", ln_gamma);
    visit(prefix + ".ln.beta", ln_beta);
    fc_in.visit_params(prefix + ".fc_in", visit);
    fc_out.visit_params(prefix + ".fc_out", visit);
  }
};

}  // namespace vtn
