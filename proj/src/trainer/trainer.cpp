// SPDX-License-Identifier: Apache-2.0
#include "raum/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "raum/error.hpp"
#include "raum/fileio.hpp"
#include "raum/numkernel/ops.hpp"
#include "raum/trainer/optim.hpp"

namespace raum::trainer {
namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kLabeledOrderTag = 0x10de;
constexpr std::uint64_t kUnlabeledOrderTag = 0x0de2;
constexpr std::uint64_t kLabeledItemTag = 0x1abe;
constexpr std::uint64_t kUnlabeledItemTag = 0x2abe;
constexpr std::uint64_t kHoldoutTag = 0x401d;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[rng.below(i)]);
    }
}

Tensor sum_scalars(const std::vector<Tensor>& terms, Tape* tape) {
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) {
        acc = ops::add(acc, terms[i], tape);
    }
    return acc;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

NamedTensors snapshot(const NamedTensors& params) {
    NamedTensors out;
    for (const auto& p : params) {
        out.push_back({p.name, p.tensor.detach()});
    }
    return out;
}

nlohmann::ordered_json number_or_null(double v) {
    return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
}

} // namespace

std::string_view ablation_name(Ablation a) {
    switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_ra: return "no_ra";
    case Ablation::no_bu: return "no_bu";
    case Ablation::backbone_only: return "backbone_only";
    }
    return "unknown";
}

Ablation parse_ablation(std::string_view name) {
    for (auto a : {Ablation::full, Ablation::no_ra, Ablation::no_bu, Ablation::backbone_only}) {
        if (ablation_name(a) == name) return a;
    }
    throw ConfigError("unknown ablation '" + std::string(name) + "' (expected full, no_ra, no_bu, backbone_only)");
}

bool uses_attention(Ablation a) { return a == Ablation::full || a == Ablation::no_bu; }
bool uses_uncertainty(Ablation a) { return a == Ablation::full || a == Ablation::no_ra; }

void TrainConfig::validate() const {
    if (!(lambda_u >= 0.0)) throw ConfigError("lambda_u must be non-negative");
    if (batch_labeled < 1 || batch_unlabeled < 1) throw ConfigError("batch sizes must be at least 1");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (warmup_epochs > epochs) throw ConfigError("warmup_epochs must not exceed epochs");
    if (mc_passes < 2) throw ConfigError("mc_passes must be at least 2");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout_fraction must lie in [0, 1)");
    thresholds().validate();
}

std::string metrics_row(const EpochMetrics& m) {
    std::string s = std::to_string(m.epoch);
    for (double v : {m.lr, m.lambda_weight, m.loss_s, m.loss_u, m.loss, m.yield}) s += "," + fmt(v);
    s += "," + std::to_string(m.accepted) + "," + std::to_string(m.accepted_correct);
    for (double v : {m.precision, m.test_acc, m.select_acc}) s += "," + fmt(v);
    return s;
}

Tensor supervised_loss(const rabu::RaumNet& model, const std::vector<LabeledItem>& batch,
                       const augment::AugmentSpec& aug, Tape* tape) {
    if (batch.empty()) throw DataError("supervised_loss: empty batch");
    std::vector<Tensor> terms;
    terms.reserve(batch.size());
    for (const auto& item : batch) {
        Rng aug_rng(derive_seed({item.seed, 1}));
        Rng drop_rng(derive_seed({item.seed, 2}));
        const Tensor view = augment::strong_augment(*item.image, aug, aug_rng);
        terms.push_back(ops::cross_entropy_logits(model.logits(view, true, &drop_rng, tape), item.label, tape));
    }
    return ops::scale(sum_scalars(terms, tape), 1.0 / double(batch.size()), tape);
}

Tensor masked_pseudo_label_loss(const std::vector<Tensor>& strong_logits,
                                const std::vector<rabu::PseudoLabelDecision>& decisions, Tape* tape) {
    if (strong_logits.size() != decisions.size()) {
        throw ShapeError("masked_pseudo_label_loss: logits and decisions differ in count");
    }
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        if (decisions[i].accepted) {
            terms.push_back(ops::cross_entropy_logits(strong_logits[i], decisions[i].label, tape));
        }
    }
    if (terms.empty()) return Tensor::scalar(0.0);
    return ops::scale(sum_scalars(terms, tape), 1.0 / double(terms.size()), tape);
}

rabu::PseudoLabelDecision confidence_decision(const rabu::RaumNet& model, const Tensor& image, double tau_c) {
    const Tensor p = model.probabilities(image, false, nullptr);
    rabu::PseudoLabelDecision d;
    d.mean_prob.assign(p.data().begin(), p.data().end());
    d.label = rabu::argmax(d.mean_prob);
    d.uncertainty = 0.0;
    d.accepted = d.confidence() >= tau_c;
    return d;
}

UnsupervisedResult unsupervised_loss(const rabu::RaumNet& model, const std::vector<UnlabeledItem>& batch,
                                     const TrainConfig& cfg, const augment::AugmentSpec& aug, Tape* tape) {
    const auto th = cfg.thresholds();
    th.validate();
    UnsupervisedResult out;
    std::vector<Tensor> logits(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& item = batch[i];
        Rng weak_rng(derive_seed({item.seed, 1}));
        const Tensor weak = augment::weak_augment(*item.image, aug, weak_rng);
        if (uses_uncertainty(cfg.ablation)) {
            Rng ens_rng(derive_seed({item.seed, 2}));
            out.decisions.push_back(rabu::decide(rabu::mc_dropout_ensemble(model, weak, cfg.mc_passes, ens_rng), th));
        } else {
            out.decisions.push_back(confidence_decision(model, weak, cfg.tau_c));
        }
        if (out.decisions.back().accepted) {
            Rng strong_rng(derive_seed({item.seed, 3}));
            Rng drop_rng(derive_seed({item.seed, 4}));
            const Tensor strong = augment::strong_augment(*item.image, aug, strong_rng);
            logits[i] = model.logits(strong, true, &drop_rng, tape);
        }
    }
    out.loss = masked_pseudo_label_loss(logits, out.decisions, tape);
    return out;
}

Tensor total_loss(const Tensor& loss_s, const Tensor& loss_u, double lambda, Tape* tape) {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    return ops::add(loss_s, ops::scale(loss_u, lambda, tape), tape);
}

double ramped_lambda(double lambda, double progress, std::size_t warmup_epochs) {
    if (warmup_epochs == 0) return lambda;
    return lambda * std::clamp(progress / double(warmup_epochs), 0.0, 1.0);
}

double evaluate(const Predictor& predict, const data::PreparedDataset& ds, const std::vector<std::size_t>& ids) {
    if (ids.empty()) throw DataError("evaluate: empty evaluation set");
    std::size_t correct = 0;
    for (auto id : ids) {
        correct += predict(ds.images.at(id)) == ds.labels.at(id);
    }
    return double(correct) / double(ids.size());
}

double evaluate(const rabu::RaumNet& model, const data::PreparedDataset& ds, const std::vector<std::size_t>& ids) {
    return evaluate([&model](const Tensor& image) { return rabu::argmax(model.logits(image, false, nullptr).data()); },
                    ds, ids);
}

TrainResult train(const TrainConfig& cfg, const backbone::BackboneConfig& model_cfg,
                  const augment::AugmentSpec& aug, const data::PreparedDataset& ds, const RunOptions& opts) {
    cfg.validate();
    model_cfg.validate();
    aug.validate();
    if (model_cfg.num_classes != ds.num_classes || model_cfg.image_size != ds.image_size ||
        model_cfg.channels != ds.channels) {
        throw ConfigError("model configuration does not match the dataset (classes, image size or channels)");
    }
    const auto& manifest = ds.manifest;
    if (manifest.labeled_ids.empty()) throw DataError("no labeled training samples");
    if (manifest.test_ids.empty()) throw DataError("no test samples");

    std::vector<std::size_t> select_ids = manifest.test_ids, report_ids = manifest.test_ids;
    if (cfg.holdout_fraction > 0.0) {
        std::vector<std::size_t> order = manifest.test_ids;
        Rng rng(derive_seed({cfg.seed, kHoldoutTag}));
        shuffle(order, rng);
        const auto n = std::clamp<std::size_t>(std::size_t(std::lround(cfg.holdout_fraction * double(order.size()))), 1,
                                               order.size() - 1);
        select_ids.assign(order.begin(), order.begin() + long(n));
        report_ids.assign(order.begin() + long(n), order.end());
        std::sort(select_ids.begin(), select_ids.end());
        std::sort(report_ids.begin(), report_ids.end());
    }

    Rng init(derive_seed({cfg.seed, kInitTag}));
    rabu::RaumNet model(model_cfg, uses_attention(cfg.ablation), init);
    const NamedTensors params = model.parameters();
    AdamW opt(params, AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});

    const bool use_unlabeled = cfg.lambda_u > 0.0 && !manifest.unlabeled_ids.empty();
    // An epoch is one pass over the unlabeled set, even when it goes unused.
    const std::size_t steps = !manifest.unlabeled_ids.empty()
                                  ? (manifest.unlabeled_ids.size() + cfg.batch_unlabeled - 1) / cfg.batch_unlabeled
                                  : (manifest.labeled_ids.size() + cfg.batch_labeled - 1) / cfg.batch_labeled;

    std::ofstream metrics_file, decisions_file;
    if (opts.out_dir) {
        std::error_code ec;
        if (!std::filesystem::is_directory(*opts.out_dir) && !std::filesystem::create_directory(*opts.out_dir, ec)) {
            throw IoError("cannot create output directory '" + opts.out_dir->string() + "'" +
                          (ec ? ": " + ec.message() : ""));
        }
        metrics_file.open(*opts.out_dir / "metrics.csv", std::ios::trunc);
        if (!metrics_file) throw IoError("cannot write " + (*opts.out_dir / "metrics.csv").string());
        metrics_file << kMetricsHeader << '\n';
        if (cfg.log_decisions) decisions_file.open(*opts.out_dir / "decisions.ndjson", std::ios::trunc);
    }

    // Labeled batches cycle through a list reshuffled on every wrap.
    std::vector<std::size_t> labeled_order = manifest.labeled_ids;
    std::size_t labeled_pos = labeled_order.size(), labeled_round = 0;
    auto next_labeled = [&]() {
        if (labeled_pos == labeled_order.size()) {
            Rng rng(derive_seed({cfg.seed, kLabeledOrderTag, labeled_round++}));
            labeled_order = manifest.labeled_ids;
            shuffle(labeled_order, rng);
            labeled_pos = 0;
        }
        return labeled_order[labeled_pos++];
    };

    TrainResult result;
    result.best_select_acc = -1.0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochMetrics em;
        em.epoch = epoch;
        em.lr = cosine_lr(double(epoch), double(cfg.epochs), cfg.lr);
        std::vector<std::size_t> unlabeled = manifest.unlabeled_ids;
        {
            Rng rng(derive_seed({cfg.seed, kUnlabeledOrderTag, epoch}));
            shuffle(unlabeled, rng);
        }
        double yield_sum = 0.0;
        std::size_t yield_steps = 0;
        for (std::size_t step = 0; step < steps; ++step) {
            const double progress = double(epoch) + double(step) / double(steps);
            const double lr_t = cosine_lr(progress, double(cfg.epochs), cfg.lr);
            const double lam = ramped_lambda(cfg.lambda_u, progress, cfg.warmup_epochs);

            std::vector<LabeledItem> lbatch;
            for (std::size_t i = 0; i < cfg.batch_labeled; ++i) {
                const std::size_t id = next_labeled();
                lbatch.push_back({&ds.images[id], ds.labels[id],
                                  derive_seed({cfg.seed, kLabeledItemTag, epoch, step, i, id})});
            }

            opt.zero_grad();
            Tape tape;
            const Tensor ls = supervised_loss(model, lbatch, aug, &tape);
            Tensor lu = Tensor::scalar(0.0);
            if (use_unlabeled) {
                std::vector<UnlabeledItem> ubatch;
                std::vector<std::size_t> uids;
                for (std::size_t i = step * cfg.batch_unlabeled;
                     i < std::min(unlabeled.size(), (step + 1) * cfg.batch_unlabeled); ++i) {
                    const std::size_t id = unlabeled[i];
                    uids.push_back(id);
                    ubatch.push_back({&ds.images[id], derive_seed({cfg.seed, kUnlabeledItemTag, epoch, id})});
                }
                auto res = unsupervised_loss(model, ubatch, cfg, aug, &tape);
                lu = res.loss;
                std::size_t acc = 0;
                for (std::size_t i = 0; i < uids.size(); ++i) {
                    const auto& d = res.decisions[i];
                    if (d.accepted) {
                        ++acc;
                        em.accepted_correct += d.label == ds.labels[uids[i]];
                    }
                    if (decisions_file.is_open()) {
                        decisions_file << rabu::decision_record(epoch, step, uids[i], d) << '\n';
                    }
                }
                em.accepted += acc;
                yield_sum += double(acc) / double(uids.size());
                ++yield_steps;
            }
            const Tensor loss = total_loss(ls, lu, lam, &tape);
            tape.backward(loss);
            opt.step(lr_t);

            em.loss_s += ls.item();
            em.loss_u += lu.item();
            em.loss += loss.item();
            em.lambda_weight = lam;
        }
        em.loss_s /= double(steps);
        em.loss_u /= double(steps);
        em.loss /= double(steps);
        em.yield = yield_steps ? yield_sum / double(yield_steps) : 0.0;
        em.precision = em.accepted ? double(em.accepted_correct) / double(em.accepted) : kNaN;
        em.test_acc = evaluate(model, ds, report_ids);
        em.select_acc = cfg.holdout_fraction > 0.0 ? evaluate(model, ds, select_ids) : em.test_acc;

        result.accepted_total += em.accepted;
        result.accepted_correct_total += em.accepted_correct;
        if (em.select_acc > result.best_select_acc) {
            result.best_select_acc = em.select_acc;
            result.best_test_acc = em.test_acc;
            result.best_epoch = epoch;
            result.best_parameters = snapshot(params);
        }
        result.history.push_back(em);
        if (metrics_file.is_open()) {
            metrics_file << metrics_row(em) << '\n';
            metrics_file.flush();
        }
        if (opts.on_epoch) opts.on_epoch(em);
    }
    result.final_test_acc = result.history.back().test_acc;
    result.pooled_precision = result.accepted_total
                                  ? double(result.accepted_correct_total) / double(result.accepted_total)
                                  : kNaN;

    if (opts.out_dir) {
        const auto& dir = *opts.out_dir;
        write_tensors(dir / "best.ckpt", result.best_parameters);
        write_tensors(dir / "final.ckpt", snapshot(params));
        write_tensors(dir / "optimizer.ckpt", opt.state());
        nlohmann::ordered_json s;
        s["ablation"] = ablation_name(cfg.ablation);
        s["seed"] = cfg.seed;
        s["epochs"] = cfg.epochs;
        s["final_test_acc"] = result.final_test_acc;
        s["best_test_acc"] = result.best_test_acc;
        s["best_select_acc"] = result.best_select_acc;
        s["best_epoch"] = result.best_epoch;
        s["accepted_total"] = result.accepted_total;
        s["accepted_correct_total"] = result.accepted_correct_total;
        s["pooled_precision"] = number_or_null(result.pooled_precision);
        s["config"] = opts.config_echo;
        fileio::write_text(dir / "summary.json", s.dump(2) + "\n");
    }
    return result;
}

} // namespace raum::trainer
