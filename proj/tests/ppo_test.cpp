#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>

#include "reforest/ppo.hpp"

using namespace reforest;
using namespace reforest::ppo;

namespace {

Scenario flat_scenario() {
    Scenario s;
    s.config = ScenarioConfig{};
    s.config.validate();
    s.heights.assign(static_cast<std::size_t>(s.config.grid_resolution) * s.config.grid_resolution,
                     0.0f);
    s.fertile.assign(s.heights.size(), 1);
    s.trees = TreeIndex(s.config.world_extent);
    s.add_tree(50.0, 0.0);
    s.station = {0.0, 0.0, 0.0};
    return s;
}

}  // namespace

TEST_CASE("GAE hand examples") {
    SECTION("gamma=1, lambda=1, two unit rewards, terminal end") {
        auto [adv, ret] = compute_gae({1.0, 1.0}, {0.0, 0.0}, {0, 1}, 0.0, 1.0, 1.0);
        REQUIRE(adv.size() == 2);
        CHECK(adv[0] == Catch::Approx(2.0));
        CHECK(adv[1] == Catch::Approx(1.0));
        CHECK(ret[0] == Catch::Approx(2.0));  // returns = A + V with V = 0
        CHECK(ret[1] == Catch::Approx(1.0));
    }
    SECTION("bootstrap value enters at horizon truncation") {
        auto [adv, ret] = compute_gae({0.0}, {1.0}, {0}, 2.0, 0.5, 1.0);
        // delta = 0 + 0.5*2 - 1 = 0
        CHECK(adv[0] == Catch::Approx(0.0));
        CHECK(ret[0] == Catch::Approx(1.0));
    }
    SECTION("length mismatch throws") {
        CHECK_THROWS_AS(compute_gae({1.0, 1.0}, {0.0}, {0, 1}, 0.0, 0.99, 0.95), LengthMismatch);
        CHECK_THROWS_AS(compute_gae({1.0}, {0.0}, {0, 1}, 0.0, 0.99, 0.95), LengthMismatch);
    }
}

TEST_CASE("lambda=0 collapses advantages to TD residuals") {
    Rng rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + rng.uniform_int(30);
        std::vector<double> r(n), v(n);
        std::vector<int> d(n, 0);
        for (auto& x : r) x = rng.uniform(-5, 5);
        for (auto& x : v) x = rng.uniform(-5, 5);
        d[n - 1] = rng.uniform_int(2);
        const double boot = rng.uniform(-5, 5);
        const double gamma = 0.97;
        auto [adv, ret] = compute_gae(r, v, d, boot, gamma, 0.0);
        for (int i = 0; i < n; ++i) {
            const double vn = (i + 1 < n) ? v[i + 1] : boot;
            const double nd = d[i] ? 0.0 : 1.0;
            CHECK(adv[i] == Catch::Approx(r[i] + gamma * vn * nd - v[i]).margin(1e-12));
        }
    }
}

TEST_CASE("lambda=1 advantages match brute-force discounted sums") {
    Rng rng(7);
    const double gamma = 0.99;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + rng.uniform_int(49);
        std::vector<double> r(n), v(n);
        std::vector<int> d(n, 0);
        d[n - 1] = 1;  // terminal episode
        for (auto& x : r) x = rng.uniform(-10, 10);
        for (auto& x : v) x = rng.uniform(-10, 10);
        auto [adv, ret] = compute_gae(r, v, d, 0.0, gamma, 1.0);
        for (int t = 0; t < n; ++t) {
            double disc = 0.0, g = 1.0;
            for (int k = t; k < n; ++k) {
                disc += g * r[k];
                g *= gamma;
            }
            CHECK(adv[t] + v[t] == Catch::Approx(disc).margin(1e-6));
            CHECK(ret[t] == Catch::Approx(disc).margin(1e-6));
        }
    }
}

TEST_CASE("clip objective examples and bounds") {
    SECTION("hand examples") {
        CHECK(clip_objective(1.5, 1.0, 0.2) == Catch::Approx(1.2));
        CHECK(clip_objective(0.5, -1.0, 0.2) == Catch::Approx(-0.8));
        CHECK(clip_objective(1.0, 3.7, 0.2) == Catch::Approx(3.7));
        CHECK(clip_objective(1.0, -2.2, 0.2) == Catch::Approx(-2.2));
        CHECK(clip_objective(2.0, 0.0, 0.2) == 0.0);
    }
    SECTION("bound and flatness outside the trust region") {
        Rng rng(5);
        for (int i = 0; i < 2000; ++i) {
            const double r = rng.uniform(0.01, 3.0);
            const double a = rng.uniform(-4, 4);
            const double eps = rng.uniform(0.05, 0.5);
            const double o = clip_objective(r, a, eps);
            CHECK(std::abs(o) <= std::max(std::abs(r * a), (1 + eps) * std::abs(a)) + 1e-12);
        }
        // flat in r above 1+eps for positive A
        CHECK(clip_objective(1.3, 2.0, 0.2) == clip_objective(2.5, 2.0, 0.2));
        // flat in r below 1-eps for negative A
        CHECK(clip_objective(0.7, -2.0, 0.2) == clip_objective(0.1, -2.0, 0.2));
    }
}

TEST_CASE("ppo config validation") {
    PpoConfig cfg;
    cfg.buffer_size = 1000;
    cfg.batch_size = 300;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = PpoConfig{};
    cfg.gamma = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = PpoConfig{};
    cfg.lambda = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_NOTHROW(PpoConfig{}.validate());
}

TEST_CASE("curiosity model: non-negative bonus that shrinks with training") {
    const int obs_dim = 8, act_dim = 5, enc_dim = 16;
    CuriosityModel<double> model(obs_dim, act_dim, enc_dim, 3);
    Rng rng(12);

    // fixed transition structure: next obs = obs circularly shifted
    auto make_batch = [&](int n, std::vector<std::vector<double>>& enc,
                          std::vector<std::vector<double>>& act,
                          std::vector<std::vector<double>>& enc_next) {
        for (int i = 0; i < n; ++i) {
            std::vector<double> o(obs_dim), o2(obs_dim), a(act_dim, 0.0);
            for (auto& v : o) v = rng.uniform(-1, 1);
            for (int j = 0; j < obs_dim; ++j) o2[j] = o[(j + 1) % obs_dim];
            enc.push_back(model.encode(o));
            act.push_back(a);
            enc_next.push_back(model.encode(o2));
        }
    };

    std::vector<std::vector<double>> enc, act, enc_next;
    make_batch(256, enc, act, enc_next);

    auto mean_intrinsic = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < enc.size(); ++i) {
            const double r = model.intrinsic_reward(enc[i], act[i], enc_next[i], 0.1);
            REQUIRE(r >= 0.0);
            s += r;
        }
        return s / enc.size();
    };

    const double before = mean_intrinsic();
    for (int it = 0; it < 1500; ++it) model.train_batch(enc, act, enc_next, 0.05);
    const double after = mean_intrinsic();
    CHECK(after < 0.75 * before);  // the forward model actually fits
}

namespace {

// 1-D "move toward the beacon" micro-task solved with the same loss graph the
// trainer uses: state x in [-1,1], action moves 0.2*a0, reward -|x| per step.
bool beacon_improves(std::uint64_t seed, double* first_out = nullptr,
                     double* last_out = nullptr) {
    using nn::Var;
    nn::PolicyConfig pc;
    pc.vec_obs_dim = 1;
    pc.use_visual = false;
    pc.trunk_units = 16;
    nn::PolicyNet<float> net(pc);
    Rng init(seed);
    net.init(init);
    nn::Adam<float> adam;
    Rng rng(hash_combine(seed, 1));

    const int n_eps = 8, horizon = 16, n = n_eps * horizon;
    const double gamma = 0.99, lambda = 0.95, eps_clip = 0.2, beta = 0.005;
    std::vector<double> update_mean_reward;

    for (int update = 0; update < 50; ++update) {
        // --- collect ---
        std::vector<double> xs(n_eps);
        for (auto& x : xs) x = rng.uniform(-1, 1);
        std::vector<std::vector<double>> ep_obs(n_eps), ep_logp(n_eps), ep_val(n_eps),
            ep_rew(n_eps);
        std::vector<std::vector<std::array<double, 3>>> ep_raw(n_eps);
        std::vector<std::vector<std::array<int, 2>>> ep_disc(n_eps);
        for (int t = 0; t < horizon; ++t) {
            std::vector<double> obs(xs.begin(), xs.end());
            auto fwd = net.forward(obs, n_eps);
            for (int e = 0; e < n_eps; ++e) {
                const auto ev = net.eval_row(fwd, e);
                const auto s = nn::sample_action(ev, rng);
                ep_obs[e].push_back(xs[e]);
                ep_raw[e].push_back(s.cont_raw);
                ep_disc[e].push_back(s.disc);
                ep_logp[e].push_back(s.log_prob);
                ep_val[e].push_back(ev.value);
                xs[e] = std::clamp(xs[e] + 0.2 * s.cont[0], -1.0, 1.0);
                ep_rew[e].push_back(-std::abs(xs[e]));
            }
        }
        double mean_ep_reward = 0.0;
        std::vector<double> obs_f, logp_f, adv_f, ret_f;
        std::vector<std::array<double, 3>> raw_f;
        std::vector<std::array<int, 2>> disc_f;
        for (int e = 0; e < n_eps; ++e) {
            std::vector<int> dones(horizon, 0);
            dones[horizon - 1] = 1;
            auto [adv, ret] = compute_gae(ep_rew[e], ep_val[e], dones, 0.0, gamma, lambda);
            for (int t = 0; t < horizon; ++t) {
                obs_f.push_back(ep_obs[e][t]);
                raw_f.push_back(ep_raw[e][t]);
                disc_f.push_back(ep_disc[e][t]);
                logp_f.push_back(ep_logp[e][t]);
                adv_f.push_back(adv[t]);
                ret_f.push_back(ret[t]);
                mean_ep_reward += ep_rew[e][t];
            }
        }
        update_mean_reward.push_back(mean_ep_reward / n_eps);

        // --- update: one full-batch minibatch, 3 epochs ---
        for (int epoch = 0; epoch < 3; ++epoch) {
            double am = 0.0, asq = 0.0;
            for (double a : adv_f) am += a;
            am /= n;
            for (double a : adv_f) asq += (a - am) * (a - am);
            const double astd = std::sqrt(asq / n) + 1e-8;

            nn::Tensor<float> act({n, 3}), g_t({n}), adv_t({n}), lp_old({n}), ret_t({n, 1});
            std::vector<int> i0(n), i1(n);
            for (int i = 0; i < n; ++i) {
                for (int k = 0; k < 3; ++k) act.data[i * 3 + k] = float(raw_f[i][k]);
                i0[i] = disc_f[i][0];
                i1[i] = disc_f[i][1];
                const double a = (adv_f[i] - am) / astd;
                adv_t.data[i] = float(a);
                g_t.data[i] = float(a >= 0 ? (1 + eps_clip) * a : (1 - eps_clip) * a);
                lp_old.data[i] = float(logp_f[i]);
                ret_t.data[i] = float(ret_f[i]);
            }
            auto out = net.forward(obs_f, n);
            auto ls_b = nn::broadcast_rows(out.log_std, n);
            auto z = nn::mul(nn::sub_const(out.means, act), nn::exp_(nn::scale(ls_b, -1.0)));
            auto lp = nn::sum_cols(nn::add_scalar(nn::sub(nn::scale(nn::square(z), -0.5), ls_b),
                                                  -0.5 * std::log(2.0 * M_PI)));
            auto lsm0 = nn::log_softmax(out.branch_logits[0]);
            auto lsm1 = nn::log_softmax(out.branch_logits[1]);
            lp = nn::add(lp, nn::add(nn::gather_col(lsm0, i0), nn::gather_col(lsm1, i1)));
            auto ratio = nn::exp_(nn::sub_const(lp, lp_old));
            auto surr = nn::mean_all(nn::min_with(nn::mul_const(ratio, adv_t), g_t));
            auto vloss = nn::mean_all(nn::square(nn::sub_const(out.value, ret_t)));
            auto ent = nn::add_scalar(nn::scale(nn::mean_all(out.log_std), 3.0),
                                      1.5 * (1.0 + std::log(2.0 * M_PI)));
            auto loss = nn::add(nn::scale(surr, -1.0), nn::scale(vloss, 0.5));
            loss = nn::add(loss, nn::scale(ent, -beta));
            nn::backward(loss);
            adam.step(net.params(), net.collect_grads(), 3e-3);
        }
    }

    double first = 0.0, last = 0.0;
    for (int i = 0; i < 5; ++i) {
        first += update_mean_reward[i] / 5.0;
        last += update_mean_reward[45 + i] / 5.0;
    }
    if (first_out) *first_out = first;
    if (last_out) *last_out = last;
    return last > first;
}

}  // namespace

TEST_CASE("PPO learns a 1-D beacon task in at least 9 of 10 seeds") {
    int improved = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) improved += beacon_improves(seed);
    CHECK(improved >= 9);
}

TEST_CASE("trainer: first-epoch ratio is 1 within tolerance") {
    EnvConfig ec;
    ec.n_drones = 2;
    ec.episode_length = 64;
    nn::PolicyConfig pc;
    pc.vec_obs_dim = 30;
    pc.use_visual = false;
    pc.trunk_units = 16;
    PpoConfig cfg;
    cfg.batch_size = 64;
    cfg.buffer_size = 128;
    cfg.time_horizon = 32;
    cfg.num_epochs = 1;
    cfg.max_steps = 1'000'000;
    Trainer<double> trainer(
        pc, cfg, [&](long, int) { return Env(flat_scenario(), ec); }, ObsLayout::Paper15, 3);
    const auto st = trainer.train_iteration();
    CHECK(st.mean_ratio == Catch::Approx(1.0).margin(1e-6));
    CHECK(st.clip_fraction == 0.0);
    CHECK(trainer.total_steps() == 128);
}

TEST_CASE("trainer: linear learning-rate decay reaches zero at max_steps") {
    EnvConfig ec;
    ec.n_drones = 1;
    ec.episode_length = 32;
    nn::PolicyConfig pc;
    pc.vec_obs_dim = 30;
    pc.use_visual = false;
    pc.trunk_units = 8;
    PpoConfig cfg;
    cfg.batch_size = 32;
    cfg.buffer_size = 32;
    cfg.max_steps = 1000;
    Trainer<float> trainer(
        pc, cfg, [&](long, int) { return Env(flat_scenario(), ec); }, ObsLayout::Paper15, 4);
    CHECK(trainer.current_lr() == Catch::Approx(cfg.learning_rate));
    trainer.set_total_steps(500);
    CHECK(trainer.current_lr() == Catch::Approx(0.5 * cfg.learning_rate));
    trainer.set_total_steps(1000);
    CHECK(trainer.current_lr() == 0.0);
    trainer.set_total_steps(2000);
    CHECK(trainer.current_lr() == 0.0);
}

TEST_CASE("trainer runs are deterministic and thread-count independent") {
    auto run = [&](int workers, const char* threads) {
        if (threads)
            setenv("REFOREST_THREADS", threads, 1);
        else
            unsetenv("REFOREST_THREADS");
        EnvConfig ec;
        ec.n_drones = 2;
        ec.episode_length = 32;
        nn::PolicyConfig pc;
        pc.vec_obs_dim = 30;
        pc.use_visual = false;
        pc.trunk_units = 8;
        PpoConfig cfg;
        cfg.batch_size = 64;
        cfg.buffer_size = 128;
        cfg.time_horizon = 16;
        cfg.num_workers = workers;
        Trainer<float> trainer(
            pc, cfg, [&](long ep, int) { return Env(flat_scenario(), ec, ep); },
            ObsLayout::Paper15, 9);
        for (int i = 0; i < 2; ++i) trainer.train_iteration();
        unsetenv("REFOREST_THREADS");
        return trainer.net().params().flatten();
    };
    const auto a = run(2, nullptr);   // sequential workers
    const auto b = run(2, "2");      // threaded workers
    const auto c = run(2, "2");
    REQUIRE(a.size() == b.size());
    CHECK(a == b);
    CHECK(b == c);
}

TEST_CASE("trainer records episode metrics") {
    EnvConfig ec;
    ec.n_drones = 2;
    ec.episode_length = 16;
    nn::PolicyConfig pc;
    pc.vec_obs_dim = 30;
    pc.use_visual = false;
    pc.trunk_units = 8;
    PpoConfig cfg;
    cfg.batch_size = 64;
    cfg.buffer_size = 64;
    cfg.time_horizon = 16;
    Trainer<float> trainer(
        pc, cfg, [&](long, int) { return Env(flat_scenario(), ec); }, ObsLayout::Paper15, 6);
    trainer.train_iteration();
    // 64 transitions / 2 drones = 32 env steps = 2 full episodes
    REQUIRE(trainer.episode_metrics().size() == 2);
    for (const auto& em : trainer.episode_metrics()) {
        CHECK(std::isfinite(em.cumulative_reward));
        CHECK(em.out_of_energy_count == 0);  // 16 steps cannot drain a battery
        CHECK(em.tree_drop_count >= 0);
        CHECK(em.tree_drop_reward >= 0.0);
        CHECK(em.distance_reward >= 0.0);
    }
}

TEST_CASE("trainer with curiosity blends a non-negative intrinsic bonus") {
    EnvConfig ec;
    ec.n_drones = 1;
    ec.episode_length = 32;
    nn::PolicyConfig pc;
    pc.vec_obs_dim = 30;
    pc.use_visual = false;
    pc.trunk_units = 8;
    PpoConfig cfg;
    cfg.batch_size = 32;
    cfg.buffer_size = 32;
    cfg.time_horizon = 16;
    cfg.curiosity_enabled = true;
    cfg.curiosity_encoding = 16;
    Trainer<float> trainer(
        pc, cfg, [&](long, int) { return Env(flat_scenario(), ec); }, ObsLayout::Paper15, 8);
    const auto st = trainer.train_iteration();
    CHECK(std::isfinite(st.policy_loss));
    CHECK(std::isfinite(st.value_loss));
    CHECK(trainer.total_steps() == 32);
}

TEST_CASE("update on an empty buffer is rejected") {
    EnvConfig ec;
    ec.n_drones = 1;
    nn::PolicyConfig pc;
    pc.vec_obs_dim = 30;
    pc.use_visual = false;
    pc.trunk_units = 8;
    PpoConfig cfg;
    cfg.batch_size = 32;
    cfg.buffer_size = 32;
    Trainer<float> trainer(
        pc, cfg, [&](long, int) { return Env(flat_scenario(), ec); }, ObsLayout::Paper15, 1);
    CHECK_THROWS_AS(trainer.update(), NonFiniteLoss);
}
