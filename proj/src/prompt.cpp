#include "climatellm/prompt.hpp"

#include "climatellm/errors.hpp"

namespace climatellm {

Matrix<double> aggregate_variables(const Tensor3& s) {
    if (s.d0 == 0) throw InvalidInput("aggregate_variables over an empty variable axis");
    Matrix<double> out(s.d1, s.d2);
    for (std::size_t c = 0; c < s.d0; ++c)
        for (std::size_t l = 0; l < s.d1; ++l)
            for (std::size_t k = 0; k < s.d2; ++k) out(l, k) += s.at(c, l, k);
    for (double& x : out.data) x /= static_cast<double>(s.d0);
    return out;
}

Matrix<double> aggregate_time(const Tensor3& s) {
    if (s.d1 == 0) throw InvalidInput("aggregate_time over an empty time axis");
    Matrix<double> out(s.d0, s.d2);
    for (std::size_t c = 0; c < s.d0; ++c)
        for (std::size_t l = 0; l < s.d1; ++l)
            for (std::size_t k = 0; k < s.d2; ++k) out(c, k) += s.at(c, l, k);
    for (double& x : out.data) x /= static_cast<double>(s.d1);
    return out;
}

MetaFusionResult meta_fusion(const Model<double>& model, const Tensor3& s) {
    if (s.d0 == 0 || s.d1 == 0) throw InvalidInput("meta_fusion over an empty representation");
    if (s.d2 != model.config.d_model) {
        throw ShapeError("meta_fusion: representation width " + std::to_string(s.d2) +
                         " differs from d_model " + std::to_string(model.config.d_model));
    }
    Tape<double> tape;
    auto vars = graph::bind_prompt(tape, model.params, model.config.prompt_heads, nullptr);
    auto input = tape.constant(s.d0 * s.d1, s.d2, s.data);
    std::vector<graph::Var<double>> tw, vw;
    auto out = graph::meta_fusion(tape, vars, input, s.d0, s.d1, model.config.ln_eps, &tw, &vw);
    MetaFusionResult r;
    r.prompts = tape.matrix(out);
    for (auto w : tw) r.temporal_weights.push_back(tape.matrix(w));
    for (auto w : vw) r.variable_weights.push_back(tape.matrix(w));
    return r;
}

}  // namespace climatellm
