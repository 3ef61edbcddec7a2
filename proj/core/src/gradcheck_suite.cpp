#include "msam/gradcheck_suite.hpp"

#include <cmath>

#include "msam/embio.hpp"
#include "msam/random.hpp"

namespace msam {

ModelParams<double> gradcheck_params(const GradCheckSetup& setup) {
  ModelParams<double> p = init_params<double>(setup.dim, setup.k, setup.seed);
  Rng rng(setup.seed ^ 0xC2B2AE3D27D4EB4FULL);
  ModelParams<double>::visit(p, [&](const std::string& name, Tensor<double>& t, bool) {
    if (name == "scale.log_tau_inv") {
      t[0] = std::log(10.0);
      return;
    }
    const double spread = name == "ciffp.gate_weight" ? 0.5 : 0.1;
    for (auto& x : t.data()) x += spread * rng.normal();
  });
  return p;
}

PairedBatch<double> gradcheck_batch(const GradCheckSetup& setup) {
  SynthSpec spec;
  spec.num_videos = setup.batch;
  spec.frames_per_video = setup.frames;
  spec.captions_per_video = 1;
  spec.token_len = setup.tokens;
  spec.dim = setup.dim;
  spec.cluster_noise = setup.noise;
  spec.seed = setup.seed;
  const EmbeddingBatch data = gen_synthetic(spec);
  const auto videos = all_indices(data.videos.size());
  const auto texts = text_to_video_index(data);
  std::vector<std::size_t> order(texts.size());
  for (std::size_t t = 0; t < texts.size(); ++t) order[texts[t]] = t;
  return make_pairs<double>(data, videos, order);
}

std::vector<LossGradCheck> run_loss_gradchecks(const GradCheckSetup& setup) {
  const ModelParams<double> params = gradcheck_params(setup);
  const PairedBatch<double> batch = gradcheck_batch(setup);
  std::vector<LossGradCheck> out;
  for (const char* which : {"vtm", "ddsl", "dst", "total"}) {
    const std::string name = which;
    const LossBuilder<double> build = [&](Tape<double>& tape) {
      const LossVars<double> l = build_loss(tape, params, batch, setup.lambda, false);
      if (name == "vtm") return l.vtm;
      if (name == "ddsl") return l.ddsl;
      if (name == "dst") return l.dst;
      return l.total;
    };
    out.push_back({name, grad_check(build, setup.step)});
  }
  return out;
}

}  // namespace msam
