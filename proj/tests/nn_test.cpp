#include <catch2/catch_amalgamated.hpp>

#include "reforest/nn.hpp"

using namespace reforest;
using namespace reforest::nn;

namespace {

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

// small policy for gradient checking (64-bit scalars)
PolicyConfig tiny_config(bool visual) {
    PolicyConfig cfg;
    cfg.vec_obs_dim = 6;
    cfg.use_visual = visual;
    cfg.channels = {2, 3, 3};
    cfg.trunk_units = 8;
    return cfg;
}

// composite scalar loss touching every head (and hence every parameter)
Var<double> policy_loss(PolicyNet<double>& net, const std::vector<double>& obs, int batch) {
    auto f = net.forward(obs, batch);
    auto root = mean_all(square(f.means));
    root = add(root, mean_all(square(f.value)));
    root = add(root, mean_all(square(exp_(f.log_std))));
    root = add(root, mean_all(square(log_softmax(f.branch_logits[0]))));
    root = add(root, mean_all(square(log_softmax(f.branch_logits[1]))));
    return root;
}

std::vector<double> random_obs(PolicyNet<double>& net, int batch, Rng& rng) {
    std::vector<double> obs(static_cast<std::size_t>(batch) * net.input_dim());
    for (auto& v : obs) v = rng.uniform(-1, 1);
    return obs;
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(3);
    const int n = 5;
    auto fd_check = [&](auto&& graph_fn) {
        std::vector<double> x0(n);
        for (auto& v : x0) v = rng.uniform(-2, 2);
        auto value_at = [&](const std::vector<double>& xs) {
            Tensor<double> t({n});
            t.data = xs;
            auto x = make_var(std::move(t), true);
            return std::pair{graph_fn(x), x};
        };
        auto [root, x] = value_at(x0);
        backward(root);
        for (int i = 0; i < n; ++i) {
            const double h = 1e-6;
            auto xp = x0, xm = x0;
            xp[i] += h;
            xm[i] -= h;
            const double fd =
                (value_at(xp).first->val.data[0] - value_at(xm).first->val.data[0]) / (2 * h);
            CHECK(rel_err(x->grad.data[i], fd) < 1e-5);
        }
    };

    fd_check([](Var<double> x) { return mean_all(square(x)); });
    fd_check([](Var<double> x) { return mean_all(exp_(x)); });
    fd_check([](Var<double> x) { return mean_all(mul(relu(x), x)); });
    fd_check([](Var<double> x) { return mean_all(sub(square(x), scale(x, 0.7))); });
    fd_check([](Var<double> x) { return mean_all(add_scalar(square(add(x, x)), 2.0)); });
    fd_check([n](Var<double> x) {
        Tensor<double> c({n});
        for (int i = 0; i < n; ++i) c.data[i] = 0.3 * i - 0.6;
        return mean_all(min_with(square(x), std::move(c)));
    });
    fd_check([n](Var<double> x) {
        Tensor<double> c({n});
        for (int i = 0; i < n; ++i) c.data[i] = 0.5 * i - 1.0;
        return mean_all(mul_const(x, Tensor<double>(c)));
    });
}

TEST_CASE("structured op gradients match finite differences") {
    Rng rng(11);
    SECTION("dense + log_softmax + gather") {
        const int B = 3, I = 4, O = 3;
        std::vector<double> w0(O * I), x0(B * I);
        for (auto& v : w0) v = rng.uniform(-1, 1);
        for (auto& v : x0) v = rng.uniform(-1, 1);
        std::vector<int> picks{0, 2, 1};
        auto value_at = [&](const std::vector<double>& ws) {
            Tensor<double> wt({O, I}), xt({B, I}), bt({O});
            wt.data = ws;
            xt.data = x0;
            auto W = make_var(std::move(wt), true);
            auto X = constant(std::move(xt));
            auto bias = make_var(std::move(bt), true);
            auto root = mean_all(gather_col(log_softmax(dense(X, W, bias)), picks));
            return std::pair{root, W};
        };
        auto [root, W] = value_at(w0);
        backward(root);
        for (int i = 0; i < O * I; ++i) {
            const double h = 1e-6;
            auto wp = w0, wm = w0;
            wp[i] += h;
            wm[i] -= h;
            const double fd =
                (value_at(wp).first->val.data[0] - value_at(wm).first->val.data[0]) / (2 * h);
            CHECK(rel_err(W->grad.data[i], fd) < 1e-5);
        }
    }
    SECTION("conv3x3 + maxpool2 + flatten") {
        const int B = 1, C = 1, H = 4, Wd = 4, O = 2;
        std::vector<double> w0(O * C * 9), x0(B * C * H * Wd);
        for (auto& v : w0) v = rng.uniform(-1, 1);
        for (auto& v : x0) v = rng.uniform(-1, 1);
        auto value_at = [&](const std::vector<double>& ws) {
            Tensor<double> wt({O, C, 3, 3}), xt({B, C, H, Wd}), bt({O});
            wt.data = ws;
            xt.data = x0;
            auto W = make_var(std::move(wt), true);
            auto X = constant(std::move(xt));
            auto bias = make_var(std::move(bt), true);
            auto root = mean_all(square(flatten(maxpool2(conv3x3(X, W, bias)))));
            return std::pair{root, W};
        };
        auto [root, W] = value_at(w0);
        backward(root);
        for (std::size_t i = 0; i < w0.size(); ++i) {
            const double h = 1e-6;
            auto wp = w0, wm = w0;
            wp[i] += h;
            wm[i] -= h;
            const double fd =
                (value_at(wp).first->val.data[0] - value_at(wm).first->val.data[0]) / (2 * h);
            CHECK(rel_err(W->grad.data[i], fd) < 1e-5);
        }
    }
    SECTION("broadcast_rows and sum_cols") {
        const int B = 3, D = 2;
        std::vector<double> v0{0.4, -1.2};
        auto value_at = [&](const std::vector<double>& vs) {
            Tensor<double> vt({D});
            vt.data = vs;
            auto v = make_var(std::move(vt), true);
            auto root = mean_all(square(sum_cols(broadcast_rows(v, B))));
            return std::pair{root, v};
        };
        auto [root, v] = value_at(v0);
        backward(root);
        for (int i = 0; i < D; ++i) {
            const double h = 1e-6;
            auto vp = v0, vm = v0;
            vp[i] += h;
            vm[i] -= h;
            const double fd =
                (value_at(vp).first->val.data[0] - value_at(vm).first->val.data[0]) / (2 * h);
            CHECK(rel_err(v->grad.data[i], fd) < 1e-5);
        }
    }
}

TEST_CASE("policy network gradients match central finite differences") {
    // full-architecture check in 64-bit, spec step 1e-4
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        PolicyNet<double> net(tiny_config(true));
        Rng rng(seed);
        net.init(rng);
        const int batch = 2;
        const auto obs = random_obs(net, batch, rng);

        auto root = policy_loss(net, obs, batch);
        backward(root);
        const auto grads = net.collect_grads();

        auto flat = net.params().flatten();
        auto fd_at = [&](std::size_t idx, double h) {
            auto fp = flat, fm = flat;
            fp[idx] += h;
            fm[idx] -= h;
            net.params().unflatten(fp);
            const double lp = policy_loss(net, obs, batch)->val.data[0];
            net.params().unflatten(fm);
            const double lm = policy_loss(net, obs, batch)->val.data[0];
            return (lp - lm) / (2 * h);
        };
        double worst = 0.0;
        std::size_t flat_i = 0;
        for (std::size_t g = 0; g < net.params().count(); ++g) {
            for (std::size_t j = 0; j < grads[g].size(); ++j, ++flat_i) {
                double err = rel_err(grads[g].data[j], fd_at(flat_i, 1e-4));
                // a relu/maxpool kink inside the +/-h window makes the FD
                // quotient wrong by O(1); a genuine gradient bug stays wrong
                // as h shrinks, so retry those coordinates at a smaller step
                if (err >= 1e-4)
                    err = std::min(err, rel_err(grads[g].data[j], fd_at(flat_i, 1e-6)));
                worst = std::max(worst, err);
            }
        }
        net.params().unflatten(flat);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("loss independent of a parameter gives zero gradient there") {
    PolicyNet<double> net(tiny_config(false));
    Rng rng(5);
    net.init(rng);
    const auto obs = random_obs(net, 2, rng);
    auto f = net.forward(obs, 2);
    auto root = mean_all(square(f.value));  // value head only
    backward(root);
    const auto grads = net.collect_grads();
    for (std::size_t i = 0; i < net.params().count(); ++i) {
        const auto& name = net.params().name(static_cast<int>(i));
        if (name.starts_with("head_mean") || name.starts_with("head_branch") || name == "log_std")
            for (double g : grads[i].data) CHECK(g == 0.0);
    }
}

TEST_CASE("gradient of a sum of losses is the sum of the gradients") {
    PolicyNet<double> net(tiny_config(false));
    Rng rng(17);
    net.init(rng);
    const auto obs = random_obs(net, 3, rng);

    auto grads_of = [&](int which) {
        auto f = net.forward(obs, 3);
        Var<double> root;
        auto l1 = mean_all(square(f.means));
        auto l2 = mean_all(square(f.value));
        root = which == 0 ? l1 : which == 1 ? l2 : add(l1, l2);
        backward(root);
        return net.collect_grads();
    };
    const auto g1 = grads_of(0), g2 = grads_of(1), gsum = grads_of(2);
    for (std::size_t i = 0; i < gsum.size(); ++i)
        for (std::size_t j = 0; j < gsum[i].size(); ++j)
            CHECK(gsum[i].data[j] ==
                  Catch::Approx(g1[i].data[j] + g2[i].data[j]).margin(1e-12));
}

TEST_CASE("forward output arity and determinism") {
    PolicyNet<float> net(tiny_config(true));
    Rng rng(9);
    net.init(rng);
    std::vector<double> obs(net.input_dim());
    for (auto& v : obs) v = rng.uniform(-1, 1);

    auto f1 = net.forward(obs, 1);
    const auto e1 = net.eval_row(f1, 0);
    auto f2 = net.forward(obs, 1);
    const auto e2 = net.eval_row(f2, 0);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::isfinite(e1.mean[i]));
        CHECK(e1.mean[i] == e2.mean[i]);
        CHECK(e1.log_std[i] == e2.log_std[i]);
    }
    for (int br = 0; br < 2; ++br)
        for (int k = 0; k < 2; ++k) CHECK(e1.branch_logits[br][k] == e2.branch_logits[br][k]);
    CHECK(e1.value == e2.value);
}

TEST_CASE("wrong observation size raises ShapeMismatch") {
    PolicyNet<float> net(tiny_config(false));
    std::vector<double> obs(net.input_dim() + 1);
    CHECK_THROWS_AS(net.forward(obs, 1), ShapeMismatch);
}

TEST_CASE("zeroed branch heads give exactly 0.5/0.5 branch probabilities") {
    PolicyNet<float> net(tiny_config(false));
    Rng rng(13);
    net.init(rng);
    for (std::size_t i = 0; i < net.params().count(); ++i)
        if (net.params().name(static_cast<int>(i)).starts_with("head_branch")) {
            auto& t = net.params()[static_cast<int>(i)];
            std::fill(t.data.begin(), t.data.end(), 0.0f);
        }
    std::vector<double> obs(net.input_dim(), 0.3);
    auto f = net.forward(obs, 1);
    const auto e = net.eval_row(f, 0);
    for (int br = 0; br < 2; ++br) CHECK(e.branch_logits[br][0] == e.branch_logits[br][1]);

    // Monte Carlo: equal logits sample value 1 at rate 0.5 +/- 0.02
    int ones = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) ones += sample_action(e, rng).disc[0];
    CHECK(std::abs(ones / double(trials) - 0.5) < 0.02);
}

TEST_CASE("sampling semantics") {
    PolicyEval e;
    e.mean = {0.2, -0.4, 0.9};
    e.log_std = {-0.5, 0.0, 0.3};
    e.branch_logits = {{{0.3, -0.2}, {-1.0, 1.0}}};
    Rng rng(21);

    SECTION("continuous actions are clamped, log-prob uses the raw draw") {
        for (int t = 0; t < 2000; ++t) {
            const auto s = sample_action(e, rng);
            for (int i = 0; i < 3; ++i) {
                CHECK(s.cont[i] >= -1.0);
                CHECK(s.cont[i] <= 1.0);
                CHECK(s.cont[i] == std::clamp(s.cont_raw[i], -1.0, 1.0));
            }
            CHECK(action_log_prob(e, s.cont_raw, s.disc) == Catch::Approx(s.log_prob).margin(1e-6));
        }
    }
    SECTION("near-zero variance collapses to the mean") {
        PolicyEval tight = e;
        tight.log_std = {-40.0, -40.0, -40.0};
        const auto s = sample_action(tight, rng);
        for (int i = 0; i < 3; ++i) CHECK(s.cont_raw[i] == Catch::Approx(tight.mean[i]).margin(1e-9));
    }
    SECTION("greedy takes means and argmax branches") {
        const auto s = greedy_action(e);
        CHECK(s.cont[0] == Catch::Approx(0.2));
        CHECK(s.cont[2] == Catch::Approx(0.9));
        CHECK(s.disc[0] == 0);  // 0.3 > -0.2
        CHECK(s.disc[1] == 1);  // 1.0 > -1.0
    }
    SECTION("gaussian log density closed form") {
        CHECK(gaussian_log_density(0.0, 0.0, 0.0) ==
              Catch::Approx(-0.5 * std::log(2.0 * M_PI)));
        CHECK(gaussian_log_density(1.0, 0.0, 0.0) ==
              Catch::Approx(-0.5 - 0.5 * std::log(2.0 * M_PI)));
    }
}

TEST_CASE("encoder is sensitive to a one-column shift of the visual input") {
    PolicyNet<float> net(tiny_config(true));
    Rng rng(33);
    net.init(rng);
    std::vector<double> obs(net.input_dim(), 0.0);
    const int side = net.config().visual_side;
    const int voff = net.config().vec_obs_dim;
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) obs[voff + r * side + c] = (c == 4) ? 1.0 : 0.0;
    auto shifted = obs;
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) shifted[voff + r * side + c] = (c == 5) ? 1.0 : 0.0;

    const auto a = net.eval_row(net.forward(obs, 1), 0);
    const auto b = net.eval_row(net.forward(shifted, 1), 0);
    CHECK(a.value != b.value);
}

TEST_CASE("log-std parameter initializes to zero and head means start tiny") {
    PolicyNet<float> net(tiny_config(false));
    Rng rng(2);
    net.init(rng);
    std::vector<double> obs(net.input_dim(), 0.5);
    const auto e = net.eval_row(net.forward(obs, 1), 0);
    for (int i = 0; i < 3; ++i) {
        CHECK(e.log_std[i] == 0.0);
        CHECK(std::abs(e.mean[i]) < 0.05);  // 0.01-scaled head init
    }
}

TEST_CASE("Adam minimizes a quadratic and counts steps") {
    ParamStore<double> params;
    params.add("x", {1});
    params[0].data[0] = 10.0;
    Adam<double> opt;
    for (int t = 0; t < 3000; ++t) {
        std::vector<Tensor<double>> grads;
        grads.emplace_back(std::vector<int>{1});
        grads[0].data[0] = 2.0 * (params[0].data[0] - 3.0);
        opt.step(params, grads, 0.01);
    }
    CHECK(opt.step_count() == 3000);
    CHECK(params[0].data[0] == Catch::Approx(3.0).margin(1e-3));
}

TEST_CASE("non-finite gradients are rejected") {
    PolicyNet<double> net(tiny_config(false));
    Rng rng(44);
    net.init(rng);
    const auto obs = random_obs(net, 1, rng);
    auto f = net.forward(obs, 1);
    auto root = mean_all(square(f.value));
    backward(root);
    // poison one leaf gradient through the parameter store path: scale the
    // loss by infinity instead — simplest honest trigger is an inf loss graph
    auto f2 = net.forward(obs, 1);
    auto inf_root = scale(mean_all(square(f2.value)), std::numeric_limits<double>::infinity());
    backward(inf_root);
    CHECK_THROWS_AS(net.collect_grads(), NonFiniteGradient);
}

TEST_CASE("parameter count is a pure function of the config") {
    PolicyNet<float> a(tiny_config(true)), b(tiny_config(true));
    CHECK(a.params().total_scalars() == b.params().total_scalars());
    PolicyNet<float> c(tiny_config(false));
    CHECK(c.params().total_scalars() < a.params().total_scalars());
    CHECK(tiny_config(true).hash() != tiny_config(false).hash());
}
