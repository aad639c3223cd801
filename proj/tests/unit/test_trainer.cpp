// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "raum/error.hpp"
#include "raum/fileio.hpp"
#include "raum/numkernel/ops.hpp"
#include "raum/trainer/optim.hpp"
#include "raum/trainer/trainer.hpp"

using namespace raum;
using namespace raum::trainer;

namespace {

backbone::BackboneConfig tiny_model(std::size_t classes = 4) {
    backbone::BackboneConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.embed_dim = 8;
    c.state_dim = 2;
    c.num_blocks = 1;
    c.num_classes = classes;
    c.dropout_rate = 0.1;
    return c;
}

data::PreparedDataset tiny_dataset(std::uint64_t seed = 3, double ratio = 0.25) {
    data::SyntheticDatasetSpec s;
    s.num_classes = 4;
    s.samples_per_class = 8;
    s.test_per_class = 3;
    s.image_size = 16;
    s.motif_size = 4;
    s.seed = seed;
    auto ds = data::generate_dataset(s);
    return data::occlusion_protocol(ds, data::make_splits(ds, ratio, seed), data::OcclusionSpec{0.2, 1, 0.5});
}

void set_constant_head(rabu::RaumNet& m, std::size_t favoured, double margin) {
    auto& h = m.head_params();
    for (auto& v : h.weight.mutable_data()) v = 0.0;
    for (auto& v : h.bias.mutable_data()) v = 0.0;
    h.bias.mutable_data()[favoured] = margin;
}

TrainConfig tiny_train(Ablation a = Ablation::full) {
    TrainConfig c;
    c.epochs = 2;
    c.warmup_epochs = 1;
    c.batch_labeled = 4;
    c.batch_unlabeled = 8;
    c.mc_passes = 3;
    c.lr = 1e-3;
    c.tau_c = 0.3;
    c.tau_u = 0.5;
    c.ablation = a;
    c.seed = 5;
    return c;
}

// Hand-rolled AdamW for one scalar.
double adamw_oracle(double p, const std::vector<double>& grads, double lr, double wd) {
    double m = 0, v = 0;
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        const double g = grads[t - 1];
        p = p - lr * wd * p;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1 - std::pow(0.9, t));
        const double vhat = v / (1 - std::pow(0.999, t));
        p = p - lr * mhat / (std::sqrt(vhat) + 1e-8);
    }
    return p;
}

} // namespace

TEST_CASE("ablation names") {
    for (auto a : {Ablation::full, Ablation::no_ra, Ablation::no_bu, Ablation::backbone_only})
        CHECK(parse_ablation(ablation_name(a)) == a);
    CHECK_THROWS_AS(parse_ablation("fixmatch"), ConfigError);
    CHECK(uses_attention(Ablation::no_bu));
    CHECK_FALSE(uses_attention(Ablation::no_ra));
    CHECK(uses_uncertainty(Ablation::no_ra));
    CHECK_FALSE(uses_uncertainty(Ablation::backbone_only));
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.warmup_epochs = c.epochs + 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lambda_u = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch_unlabeled = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(TrainConfig{}.lambda_u == 1.0);
    CHECK(TrainConfig{}.weight_decay == 0.05);
    CHECK(TrainConfig{}.mc_passes == 10);
    CHECK(TrainConfig{}.tau_c == 0.95);
}

TEST_CASE("supervised loss") {
    Rng init(1);
    auto cfg = tiny_model(10);
    rabu::RaumNet model(cfg, true, init);
    Tensor img(Shape{16, 16, 3}, 0.4);
    augment::AugmentSpec aug;
    std::vector<LabeledItem> batch;
    for (std::size_t i = 0; i < 5; ++i) batch.push_back({&img, i % 10, 100 + i});

    SUBCASE("uniform predictor gives ln K") {
        set_constant_head(model, 0, 0.0);
        CHECK(supervised_loss(model, batch, aug, nullptr).item() == doctest::Approx(std::log(10.0)).epsilon(1e-14));
    }
    SUBCASE("perfect predictor gives zero") {
        set_constant_head(model, 3, 1000.0);
        std::vector<LabeledItem> all3;
        for (std::size_t i = 0; i < 4; ++i) all3.push_back({&img, 3, i});
        CHECK(supervised_loss(model, all3, aug, nullptr).item() == 0.0);
    }
    SUBCASE("a single sample equals its cross entropy") {
        const LabeledItem item{&img, 2, 77};
        Rng aug_rng(derive_seed({77, 1})), drop_rng(derive_seed({77, 2}));
        const Tensor view = augment::strong_augment(img, aug, aug_rng);
        const double ce = ops::cross_entropy_logits(model.logits(view, true, &drop_rng), 2).item();
        CHECK(supervised_loss(model, {item}, aug, nullptr).item() == ce);
    }
    CHECK_THROWS_AS(supervised_loss(model, {}, aug, nullptr), DataError);
}

TEST_CASE("masked pseudo-label loss") {
    Rng rng(2);
    std::vector<Tensor> logits;
    std::vector<rabu::PseudoLabelDecision> decisions(3);
    for (int i = 0; i < 3; ++i) {
        Tensor z(Shape{4});
        for (auto& v : z.mutable_data()) v = rng.normal();
        z.set_requires_grad(true);
        logits.push_back(z);
        decisions[i].label = std::size_t(i);
    }
    SUBCASE("nothing accepted gives an exact, untaped zero") {
        Tape tape;
        auto lu = masked_pseudo_label_loss(logits, decisions, &tape);
        CHECK(lu.item() == 0.0);
        CHECK_FALSE(lu.requires_grad());
        CHECK(tape.size() == 0);
    }
    SUBCASE("one accepted sample equals its cross entropy; rejected logits get no gradient") {
        decisions[1].accepted = true;
        Tape tape;
        auto lu = masked_pseudo_label_loss(logits, decisions, &tape);
        CHECK(lu.item() == ops::cross_entropy_logits(logits[1], 1).item());
        tape.backward(lu);
        CHECK(logits[1].has_grad());
        for (int i : {0, 2}) {
            const bool zero = !logits[i].has_grad() ||
                              std::all_of(logits[i].grad().begin(), logits[i].grad().end(), [](double g) { return g == 0.0; });
            CHECK(zero);
        }
    }
    SUBCASE("identical accepted samples average to the per-sample value") {
        std::vector<Tensor> same(3, logits[0]);
        for (auto& d : decisions) {
            d.accepted = true;
            d.label = 2;
        }
        CHECK(masked_pseudo_label_loss(same, decisions, nullptr).item() ==
              doctest::Approx(ops::cross_entropy_logits(logits[0], 2).item()).epsilon(1e-15));
    }
    SUBCASE("rejected entries may be empty") {
        decisions[0].accepted = true;
        std::vector<Tensor> sparse{logits[0], Tensor(), Tensor()};
        CHECK(masked_pseudo_label_loss(sparse, decisions, nullptr).item() ==
              ops::cross_entropy_logits(logits[0], 0).item());
    }
}

TEST_CASE("total loss") {
    auto ls = Tensor::scalar(1.25), lu = Tensor::scalar(0.5);
    CHECK(total_loss(ls, lu, 0.0, nullptr).item() == 1.25);
    CHECK(total_loss(ls, Tensor::scalar(0.0), 1.0, nullptr).item() == 1.25);
    CHECK(total_loss(ls, lu, 1.0, nullptr).item() == 1.75);
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const double a = rng.uniform(0, 5), b = rng.uniform(0, 5), lam = rng.uniform(0, 3);
        CHECK(total_loss(Tensor::scalar(a), Tensor::scalar(b), lam, nullptr).item() >= a);
    }
    CHECK_THROWS_AS(total_loss(ls, lu, -1.0, nullptr), ConfigError);
}

TEST_CASE("unsupervised loss") {
    Rng init(4);
    rabu::RaumNet model(tiny_model(), true, init);
    Rng data_rng(5);
    std::vector<Tensor> imgs;
    for (int i = 0; i < 6; ++i) {
        Tensor t(Shape{16, 16, 3});
        for (auto& v : t.mutable_data()) v = data_rng.uniform();
        imgs.push_back(t);
    }
    std::vector<UnlabeledItem> batch;
    for (std::size_t i = 0; i < imgs.size(); ++i) batch.push_back({&imgs[i], 1000 + i});
    augment::AugmentSpec aug;
    TrainConfig cfg = tiny_train();

    SUBCASE("all rejected gives zero loss and no gradient") {
        cfg.tau_c = 1.0;
        Tape tape;
        auto res = unsupervised_loss(model, batch, cfg, aug, &tape);
        CHECK(res.loss.item() == 0.0);
        CHECK(res.decisions.size() == 6);
        CHECK(std::none_of(res.decisions.begin(), res.decisions.end(), [](const auto& d) { return d.accepted; }));
        CHECK(tape.size() == 0);
    }
    SUBCASE("yield is monotone in both thresholds at a fixed model") {
        // untrained model: boost the head so confidences spread out
        for (auto& v : model.head_params().weight.mutable_data()) v *= 200.0;
        auto yield = [&](double tc, double tu) {
            TrainConfig c = cfg;
            c.tau_c = tc;
            c.tau_u = tu;
            auto res = unsupervised_loss(model, batch, c, aug, nullptr);
            return std::count_if(res.decisions.begin(), res.decisions.end(), [](const auto& d) { return d.accepted; });
        };
        for (double tu : {0.0, 0.01, 0.1, 1.0}) {
            long prev = 1000;
            for (double tc : {0.25, 0.4, 0.6, 0.8, 1.0}) {
                const long y = yield(tc, tu);
                CHECK(y <= prev);
                prev = y;
            }
        }
        for (double tc : {0.25, 0.5, 0.9}) {
            long prev = -1;
            for (double tu : {0.0, 0.001, 0.01, 0.1, 1.0}) {
                const long y = yield(tc, tu);
                CHECK(y >= prev);
                prev = y;
            }
        }
    }
    SUBCASE("confidence-only and RABU filters agree on degenerate ensembles") {
        auto mcfg = tiny_model();
        mcfg.dropout_rate = 0.0;
        Rng init2(6);
        rabu::RaumNet det(mcfg, true, init2);
        for (auto& v : det.head_params().weight.mutable_data()) v *= 300.0;
        for (double tc : {0.3, 0.5, 0.7}) {
            TrainConfig a = cfg, b = cfg;
            a.ablation = Ablation::full;
            b.ablation = Ablation::no_bu;
            a.tau_c = b.tau_c = tc;
            a.tau_u = b.tau_u = std::numeric_limits<double>::infinity();
            auto ra = unsupervised_loss(det, batch, a, aug, nullptr);
            auto rb = unsupervised_loss(det, batch, b, aug, nullptr);
            CHECK(ra.loss.item() == rb.loss.item());
            for (std::size_t i = 0; i < batch.size(); ++i) {
                CHECK(ra.decisions[i].accepted == rb.decisions[i].accepted);
                CHECK(ra.decisions[i].label == rb.decisions[i].label);
                CHECK(ra.decisions[i].mean_prob == rb.decisions[i].mean_prob);
            }
        }
    }
}

TEST_CASE("AdamW") {
    SUBCASE("zero gradient and zero weight decay leave parameters unchanged") {
        Tensor p = Tensor::from({1.0, -2.0, 3.0});
        p.set_requires_grad(true);
        AdamW opt({{"p", p}}, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
        opt.zero_grad();
        for (int i = 0; i < 5; ++i) opt.step(0.1);
        CHECK(std::vector<double>(p.data().begin(), p.data().end()) == std::vector<double>{1.0, -2.0, 3.0});
    }
    SUBCASE("matches a step-by-step oracle") {
        const std::vector<double> grads{0.5, -1.25, 2.0};
        Tensor p = Tensor::scalar(0.7);
        p.set_requires_grad(true);
        AdamW opt({{"p", p}}, AdamWConfig{0.9, 0.999, 1e-8, 0.05});
        for (double g : grads) {
            p.zero_grad();
            p.grad_buffer()[0] = g;
            opt.step(0.01);
        }
        CHECK(std::abs(p.item() - adamw_oracle(0.7, grads, 0.01, 0.05)) < 1e-12);
        CHECK(opt.steps() == 3);

        Tensor q = Tensor::scalar(0.7);
        AdamW again({{"p", q}}, AdamWConfig{});
        again.load_state(opt.state());
        CHECK(again.steps() == 3);
    }
    SUBCASE("shape mismatch") {
        std::vector<double> p(3), g(2), m(3), v(3);
        CHECK_THROWS_AS(adamw_update(p, g, m, v, 1, 0.1, AdamWConfig{}), ShapeError);
    }
}

TEST_CASE("cosine schedule and warm-up ramp") {
    CHECK(cosine_lr(0, 30, 1e-4) == 1e-4);
    CHECK(std::abs(cosine_lr(30, 30, 1e-4)) < 1e-20);
    CHECK(cosine_lr(15, 30, 1e-4) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK_THROWS_AS(cosine_lr(31, 30, 1e-4), ConfigError);
    CHECK_THROWS_AS(cosine_lr(-1, 30, 1e-4), ConfigError);
    for (double e = 0; e < 30; e += 0.5) CHECK(cosine_lr(e + 0.5, 30, 1.0) <= cosine_lr(e, 30, 1.0));
    CHECK(ramped_lambda(1.0, 0.0, 10) == 0.0);
    CHECK(ramped_lambda(1.0, 5.0, 10) == 0.5);
    CHECK(ramped_lambda(2.0, 25.0, 10) == 2.0);
    CHECK(ramped_lambda(1.0, 0.0, 0) == 1.0);
}

TEST_CASE("evaluate") {
    auto ds = tiny_dataset();
    const auto& ids = ds.manifest.test_ids;
    std::map<const double*, std::size_t> lookup;
    for (auto id : ids) lookup[ds.images[id].data().data()] = ds.labels[id];
    CHECK(evaluate([&](const Tensor& img) { return lookup.at(img.data().data()); }, ds, ids) == 1.0);
    CHECK(evaluate([](const Tensor&) { return std::size_t{2}; }, ds, ids) == doctest::Approx(0.25));
    CHECK_THROWS_AS(evaluate([](const Tensor&) { return std::size_t{0}; }, ds, {}), DataError);

    Rng init(9);
    rabu::RaumNet model(tiny_model(), true, init);
    set_constant_head(model, 1, 5.0);
    CHECK(evaluate(model, ds, ids) == doctest::Approx(0.25));
}

TEST_CASE("random-initialised models score near the base rate") {
    data::SyntheticDatasetSpec s;
    s.num_classes = 10;
    s.samples_per_class = 1;
    s.test_per_class = 10;
    s.image_size = 16;
    s.motif_size = 4;
    auto ds = data::generate_dataset(s);
    auto prepared = data::occlusion_protocol(ds, data::make_splits(ds, 0.5, 0), std::nullopt);
    double total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng init(seed);
        rabu::RaumNet model(tiny_model(10), true, init);
        total += evaluate(model, prepared, prepared.manifest.test_ids);
    }
    CHECK(std::abs(total / 10 - 0.1) <= 0.05);
}

TEST_CASE("training runs") {
    auto ds = tiny_dataset();
    augment::AugmentSpec aug;
    aug.strong_magnitude = 5;

    SUBCASE("same configuration and seed give identical metrics and files") {
        auto d1 = std::filesystem::temp_directory_path() / "raum_train_a";
        auto d2 = std::filesystem::temp_directory_path() / "raum_train_b";
        std::filesystem::remove_all(d1);
        std::filesystem::remove_all(d2);
        RunOptions o1, o2;
        o1.out_dir = d1;
        o2.out_dir = d2;
        auto cfg = tiny_train();
        cfg.log_decisions = true;
        auto r1 = train(cfg, tiny_model(), aug, ds, o1);
        auto r2 = train(cfg, tiny_model(), aug, ds, o2);
        REQUIRE(r1.history.size() == 2);
        for (std::size_t e = 0; e < 2; ++e) CHECK(metrics_row(r1.history[e]) == metrics_row(r2.history[e]));
        for (auto f : {"metrics.csv", "summary.json", "best.ckpt", "final.ckpt", "optimizer.ckpt", "decisions.ndjson"})
            CHECK(fileio::read_bytes(d1 / f) == fileio::read_bytes(d2 / f));
        const auto csv = fileio::read_text(d1 / "metrics.csv");
        CHECK(csv.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

        Rng init(0);
        rabu::RaumNet fresh(tiny_model(), true, init);
        load_into(read_tensors(d1 / "best.ckpt"), fresh.parameters());
        CHECK(evaluate(fresh, ds, ds.manifest.test_ids) == r1.best_test_acc);
        std::filesystem::remove_all(d1);
        std::filesystem::remove_all(d2);
    }
    SUBCASE("lambda zero never touches the unlabeled path") {
        auto cfg = tiny_train();
        cfg.lambda_u = 0.0;
        auto r = train(cfg, tiny_model(), aug, ds);
        for (const auto& m : r.history) {
            CHECK(m.accepted == 0);
            CHECK(m.yield == 0.0);
            CHECK(m.loss_u == 0.0);
            CHECK(m.loss == m.loss_s);
            CHECK(std::isnan(m.precision));
        }
    }
    SUBCASE("every ablation trains and reports bounded metrics") {
        for (auto a : {Ablation::full, Ablation::no_ra, Ablation::no_bu, Ablation::backbone_only}) {
            auto r = train(tiny_train(a), tiny_model(), aug, ds);
            for (const auto& m : r.history) {
                CHECK((m.yield >= 0.0 && m.yield <= 1.0));
                CHECK((std::isnan(m.precision) || (m.precision >= 0.0 && m.precision <= 1.0)));
                CHECK(m.loss >= m.loss_s - 1e-12);
                CHECK((m.test_acc >= 0.0 && m.test_acc <= 1.0));
            }
        }
    }
    SUBCASE("held-out selection splits the test ids") {
        auto cfg = tiny_train();
        cfg.holdout_fraction = 0.5;
        auto r = train(cfg, tiny_model(), aug, ds);
        CHECK(r.history.size() == 2);
    }
    SUBCASE("mismatched model and dataset") {
        CHECK_THROWS_AS(train(tiny_train(), tiny_model(5), aug, ds), ConfigError);
    }
}
