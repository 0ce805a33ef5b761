#include "vmus/rhythm.hpp"

#include <algorithm>
#include <cmath>

#include "vmus/error.hpp"
#include "vmus/kernels.hpp"

namespace vmus {

namespace {

double cosine_checked(std::span<const double> a, std::span<const double> b, const std::string& where) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw InvalidArgument("zero-norm feature vector at " + where);
    return dot / std::sqrt(na * nb);
}

Linear make_affine(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Tensor weight) {
    Linear l;
    l.weight = &store.add(name + ".weight", std::move(weight));
    l.bias = &store.add(name + ".bias", Tensor::matrix(1, out));
    (void)in;
    return l;
}

Linear make_rhythm_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                          RhythmInit init, bool identity, Rng& rng) {
    if (init == RhythmInit::gaussian) {
        // Standard init of the same shapes: N(0, 1/fan_in) weights and bias.
        const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
        Linear l = make_affine(store, name, in, out, gaussian({in, out}, stddev, rng));
        for (double& v : l.bias->value.values()) v = stddev * rng.normal();
        return l;
    }
    return make_affine(store, name, in, out, identity ? Tensor::identity(out) : Tensor::matrix(in, out));
}

}  // namespace

std::vector<double> mean_patch_similarity(const LocalFeatureSeq& local) {
    const Tensor& f = local.features;
    if (f.rank() != 3 || f.dim(0) == 0 || f.dim(1) == 0) {
        throw InvalidArgument("local features must be Nf x K x D with Nf, K >= 1, got " + shape_str(f.shape()));
    }
    const std::size_t nf = f.dim(0), k = f.dim(1), d = f.dim(2);
    std::vector<double> sim;
    sim.reserve(nf - 1);
    for (std::size_t i = 0; i + 1 < nf; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const std::span<const double> a(f.data() + (i * k + j) * d, d);
            const std::span<const double> b(f.data() + ((i + 1) * k + j) * d, d);
            s += cosine_checked(a, b, "frame " + std::to_string(i) + "/" + std::to_string(i + 1) + ", patch " +
                                          std::to_string(j));
        }
        sim.push_back(s / static_cast<double>(k));
    }
    if (nf == 1) {
        // Still reject a zero patch in a single-frame clip.
        for (std::size_t j = 0; j < k; ++j) {
            const std::span<const double> a(f.data() + j * d, d);
            cosine_checked(a, a, "frame 0, patch " + std::to_string(j));
        }
    }
    return sim;
}

std::vector<double> global_similarity(const Tensor& rows) {
    if (rows.rank() != 2 || rows.rows() == 0) throw InvalidArgument("global features must be a non-empty S x D matrix");
    std::vector<double> sim;
    for (std::size_t i = 0; i + 1 < rows.rows(); ++i) {
        sim.push_back(cosine_checked(rows.row(i), rows.row(i + 1), "frame " + std::to_string(i)));
    }
    if (rows.rows() == 1) cosine_checked(rows.row(0), rows.row(0), "frame 0");
    return sim;
}

DistanceSequence compute_distance_sequence(std::span<const double> sim) {
    DistanceSequence out;
    out.d.reserve(2 * (sim.size() + 1));
    out.d.push_back(0.0);  // the prepended similarity of 1
    out.d.push_back(0.0);
    for (std::size_t i = 0; i < sim.size(); ++i) {
        const double s = sim[i];
        if (!(s >= -1.0 - 1e-12 && s <= 1.0 + 1e-12)) {
            throw InvalidArgument("similarity " + std::to_string(s) + " at index " + std::to_string(i) +
                                  " outside [-1, 1]");
        }
        out.d.push_back(1.0 - std::clamp(s, -1.0, 1.0));
        out.d.push_back(0.0);
    }
    return out;
}

DistanceSequence step_held_distance_sequence(std::span<const double> sim, std::size_t tokens_per_frame,
                                             double token_rate) {
    if (tokens_per_frame == 0) throw InvalidArgument("tokens_per_frame must be >= 1");
    DistanceSequence out;
    out.token_rate = token_rate;
    out.d.assign(tokens_per_frame, 0.0);
    for (std::size_t i = 0; i < sim.size(); ++i) {
        if (!(sim[i] >= -1.0 - 1e-12 && sim[i] <= 1.0 + 1e-12)) {
            throw InvalidArgument("similarity outside [-1, 1] at index " + std::to_string(i));
        }
        out.d.insert(out.d.end(), tokens_per_frame, 1.0 - std::clamp(sim[i], -1.0, 1.0));
    }
    return out;
}

std::vector<double> fit_distance(const DistanceSequence& d, std::size_t length) {
    std::vector<double> out(length, 0.0);
    std::copy_n(d.d.begin(), std::min(length, d.d.size()), out.begin());
    return out;
}

RhythmChain::RhythmChain(ParamStore& store, std::size_t d_model, std::size_t links, RhythmInit init, Rng& rng) {
    projector_ = make_rhythm_linear(store, "rhythm.proj", 1, d_model, init, false, rng);
    for (std::size_t j = 0; j < links; ++j) {
        links_.push_back(make_rhythm_linear(store, "rhythm.link" + std::to_string(j), d_model, d_model, init, true, rng));
    }
}

std::vector<Var> RhythmChain::build(Graph& g, Var d_column) const {
    const Tensor& d = d_column.value();
    if (d.rank() != 2 || d.cols() != 1) throw InvalidArgument("rhythm input must be a T x 1 column");
    std::vector<Var> out;
    Var h = projector_(g, d_column);
    for (const Linear& link : links_) {
        h = link(g, h);
        out.push_back(h);
    }
    return out;
}

std::vector<Tensor> build_rhythm_conditions(const DistanceSequence& d, const RhythmChain& chain,
                                            std::size_t expected_blocks) {
    if (chain.links() != expected_blocks) {
        throw InvalidArgument("rhythm chain has " + std::to_string(chain.links()) + " links but the backbone expects " +
                              std::to_string(expected_blocks));
    }
    Graph g(false);
    std::vector<Tensor> out;
    for (const Var& v : chain.build(g, g.constant(Tensor::column(d.d)))) out.push_back(v.value());
    return out;
}

FirstLayerInjector::FirstLayerInjector(ParamStore& store, std::size_t d_model, std::size_t blocks, RhythmInit init,
                                       Rng& rng) {
    for (std::size_t j = 0; j < blocks; ++j) {
        maps_.push_back(make_rhythm_linear(store, "rhythm.zero" + std::to_string(j), 1, d_model, init, false, rng));
    }
}

std::vector<Var> FirstLayerInjector::build(Graph& g, Var d_column) const {
    std::vector<Var> out;
    for (const Linear& m : maps_) out.push_back(m(g, d_column));
    return out;
}

}  // namespace vmus
