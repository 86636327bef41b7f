#pragma once

// Training loop with linear learning rate decay, VCR-style metrics
// (QA, QAR, Q2AR), seed ensembling, hyperparameter grid and ablation
// runners.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "b2t2/adam.hpp"
#include "b2t2/data.hpp"
#include "b2t2/model.hpp"
#include "b2t2/objectives.hpp"

namespace b2t2 {

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 3;
    int batch_size = 32;
    std::uint64_t seed = 0;
    bool linear_decay = true;
    std::string init_checkpoint;  // optional
    std::string task = "qa";      // qa | qar | both
    double mlm_rate = 0.15;       // pretraining only

    void validate() const {
        if (learning_rate < 0.0) throw ContractError("learning_rate must be >= 0");
        if (epochs < 1) throw ContractError("epochs must be >= 1");
        if (batch_size < 1) throw ContractError("batch_size must be >= 1");
        if (task != "qa" && task != "qar" && task != "both")
            throw ContractError("task must be qa, qar or both");
    }
};

struct ExampleChoices {
    int qa_choice = -1;
    int qar_choice = -1;
    bool qa_correct = false;
    bool qar_correct = false;
};

struct EvalReport {
    double qa_accuracy = 0.0;
    double qar_accuracy = 0.0;
    double q2ar_accuracy = 0.0;
    int n = 0;
    std::vector<ExampleChoices> per_example_choices;
};

namespace detail {

inline Tensor cached_visual_tokens(const Model& model, const EncodedInstance& inst,
                                   const Image& img, PhiCache& cache) {
    return cache.visual_tokens(model, inst, img);
}

inline Tensor cached_logit_margin(const Model& model, const EncodedInstance& inst,
                                  const Image& img, PhiCache& cache) {
    if (model.config.variant.mode == FusionMode::dual_encoder) {
        Tensor contextual = model.encoder.encode(model.encoder.embed_tokens(inst.tokens),
                                                 inst.tokens.attention_mask);
        return dot(cache.get(model, img, full_image_box(img)),
                   matvec(model.params.at("fusion.d"), Encoder::psi(contextual)));
    }
    Tensor e = model.encoder.embed_tokens(inst.tokens);
    Tensor contextual;
    if (model.config.variant.mode == FusionMode::full && !inst.refmatrix.empty()) {
        e = fuse(e, inst.refmatrix, cached_visual_tokens(model, inst, img, cache));
        contextual = model.encoder.encode(e, inst.tokens.attention_mask);
    } else if (model.config.variant.mode == FusionMode::late_fusion_last_layer &&
               !inst.refmatrix.empty()) {
        contextual = model.encoder.encode(e, inst.tokens.attention_mask);
        contextual =
            fuse(contextual, inst.refmatrix, cached_visual_tokens(model, inst, img, cache));
    } else {
        contextual = model.encoder.encode(e, inst.tokens.attention_mask);
    }
    Tensor logits = add(matvec(model.params.at("fusion.a"), Encoder::psi(contextual)),
                        model.params.at("fusion.b"));
    Tensor two_col = reshape(logits, {2, 1});
    return sub(select_row(two_col, 1), select_row(two_col, 0));
}

// p(l = 1) for one candidate instance.
inline Tensor cached_positive_probability(const Model& model, const EncodedInstance& inst,
                                          const Image& img, PhiCache& cache) {
    return sigmoid(cached_logit_margin(model, inst, img, cache));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// training

struct TrainResult {
    std::vector<double> loss_curve;  // one entry per optimizer step
};

struct TrainItem {
    EncodedInstance inst;
    const Image* image;
};

inline std::vector<TrainItem> build_train_items(const std::vector<VcrStyleRecord>& records,
                                                const Vocab& vocab,
                                                const FusionVariant& variant,
                                                const std::string& task,
                                                int max_positions) {
    std::vector<TrainItem> items;
    for (const auto& rec : records) {
        if (task == "qa" || task == "both")
            for (int c = 0; c < 4; ++c)
                items.push_back({encode_qa(rec, vocab, c, variant, max_positions), &rec.image});
        if (task == "qar" || task == "both")
            for (int c = 0; c < 4; ++c)
                items.push_back(
                    {encode_qar(rec, vocab, c, variant, max_positions), &rec.image});
    }
    return items;
}

// Finetuning: minimize BCE over the per-candidate instances, batch-mean
// reduction, linear LR decay to zero over the full step count.
inline TrainResult train(Model& model, const std::vector<VcrStyleRecord>& records,
                         const Vocab& vocab, const TrainConfig& config) {
    config.validate();
    if (records.empty()) throw DataError("training dataset is empty");
    if (!config.init_checkpoint.empty()) load_checkpoint(model.params, config.init_checkpoint);

    auto items = build_train_items(records, vocab, model.config.variant, config.task,
                                   model.config.encoder.max_positions);
    ParamMap trainable = model.trainable_params();
    AdamState state;
    state.lr = config.learning_rate;
    Rng rng = make_rng(config.seed, 0xbeef);
    PhiCache cache;
    model.encoder.training = true;

    std::size_t steps_per_epoch = (items.size() + config.batch_size - 1) / config.batch_size;
    std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(config.epochs);
    TrainResult result;
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::size_t step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::size_t end = std::min(order.size(), start + config.batch_size);
            Tensor loss;
            for (std::size_t i = start; i < end; ++i) {
                const TrainItem& item = items[order[i]];
                Tensor p =
                    detail::cached_positive_probability(model, item.inst, *item.image, cache);
                Tensor item_loss = bce_loss(p, item.inst.label);
                loss = loss ? add(loss, item_loss) : item_loss;
            }
            loss = scale(loss, 1.0 / static_cast<double>(end - start));
            if (!all_finite(*loss))
                throw DivergedError("training diverged at step " + std::to_string(step));
            zero_grads(trainable);
            backward(loss);
            double decay = config.linear_decay
                               ? 1.0 - static_cast<double>(step) / total_steps
                               : 1.0;
            state.lr = config.learning_rate * decay;
            adam_step(trainable, state);
            result.loss_curve.push_back(loss->value[0]);
            ++step;
        }
    }
    model.encoder.training = false;
    return result;
}

// Pretraining: per epoch each caption yields a positive item (with MLM
// masking) and an impostor item.
inline TrainResult pretrain(Model& model, const std::vector<CaptionExample>& captions,
                            const Vocab& vocab, const TrainConfig& config) {
    config.validate();
    if (captions.size() < 2) throw DataError("pretraining needs at least 2 captions");
    if (!config.init_checkpoint.empty()) load_checkpoint(model.params, config.init_checkpoint);

    ParamMap trainable = model.trainable_params();
    AdamState state;
    state.lr = config.learning_rate;
    Rng rng = make_rng(config.seed, 0xcafe);
    PhiCache cache;
    model.encoder.training = true;

    std::vector<TokenSequence> encoded;
    encoded.reserve(captions.size());
    for (const auto& c : captions)
        encoded.push_back(encode_caption(c.caption, vocab, model.config.encoder.max_positions));

    std::size_t items_per_epoch = captions.size() * 2;
    std::size_t steps_per_epoch =
        (items_per_epoch + config.batch_size - 1) / config.batch_size;
    std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(config.epochs);
    TrainResult result;

    std::size_t step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // (caption index, positive?) pairs, shuffled
        std::vector<std::pair<int, bool>> plan;
        plan.reserve(items_per_epoch);
        for (std::size_t i = 0; i < captions.size(); ++i) {
            plan.emplace_back(static_cast<int>(i), true);
            plan.emplace_back(static_cast<int>(i), false);
        }
        std::shuffle(plan.begin(), plan.end(), rng);
        for (std::size_t start = 0; start < plan.size(); start += config.batch_size) {
            std::size_t end = std::min(plan.size(), start + config.batch_size);
            Tensor loss;
            for (std::size_t i = start; i < end; ++i) {
                auto [idx, positive] = plan[i];
                PretrainBatchItem item;
                item.image = &captions[idx].image;
                if (positive) {
                    auto [masked, targets] = mask_tokens(encoded[idx], config.mlm_rate, rng);
                    item.masked_tokens = std::move(masked);
                    item.mlm_targets = std::move(targets);
                    item.boxes = captions[idx].boxes;
                    item.label = 1;
                } else {
                    // impostor caption text over the displayed image's own
                    // geometry, so box emptiness never gives the pair away;
                    // masked like a positive so [MASK] presence carries no
                    // signal, but the MLM targets stay gated off
                    int imp = sample_impostor(captions.size(), idx, rng);
                    auto [masked, targets] = mask_tokens(encoded[imp], config.mlm_rate, rng);
                    (void)targets;
                    item.masked_tokens = std::move(masked);
                    item.boxes = captions[idx].boxes;
                    item.label = 0;
                }
                Tensor item_loss = pretrain_loss(model, item, &cache);
                loss = loss ? add(loss, item_loss) : item_loss;
            }
            loss = scale(loss, 1.0 / static_cast<double>(end - start));
            if (!all_finite(*loss))
                throw DivergedError("pretraining diverged at step " + std::to_string(step));
            zero_grads(trainable);
            backward(loss);
            double decay = config.linear_decay
                               ? 1.0 - static_cast<double>(step) / total_steps
                               : 1.0;
            state.lr = config.learning_rate * decay;
            adam_step(trainable, state);
            result.loss_curve.push_back(loss->value[0]);
            ++step;
        }
    }
    model.encoder.training = false;
    return result;
}

// ---------------------------------------------------------------------------
// evaluation

// Argmax over the four candidates of p(l = 1); ties break to the lowest
// index.
inline int choose(const Model& model, const VcrStyleRecord& rec, const Vocab& vocab,
                  Task task, PhiCache& cache) {
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < 4; ++c) {
        EncodedInstance inst =
            task == Task::QA
                ? encode_qa(rec, vocab, c, model.config.variant,
                            model.config.encoder.max_positions)
                : encode_qar(rec, vocab, c, model.config.variant,
                             model.config.encoder.max_positions);
        double score =
            detail::cached_positive_probability(model, inst, rec.image, cache)->value[0];
        if (score > best_score) {
            best_score = score;
            best = c;
        }
    }
    return best;
}

inline int choose(const Model& model, const VcrStyleRecord& rec, const Vocab& vocab,
                  Task task) {
    PhiCache cache;
    return choose(model, rec, vocab, task, cache);
}

inline EvalReport report_from_choices(const std::vector<ExampleChoices>& choices) {
    EvalReport report;
    report.n = static_cast<int>(choices.size());
    report.per_example_choices = choices;
    int qa = 0, qar = 0, both = 0;
    for (const auto& c : choices) {
        qa += c.qa_correct;
        qar += c.qar_correct;
        both += c.qa_correct && c.qar_correct;
    }
    if (report.n > 0) {
        report.qa_accuracy = static_cast<double>(qa) / report.n;
        report.qar_accuracy = static_cast<double>(qar) / report.n;
        report.q2ar_accuracy = static_cast<double>(both) / report.n;
    }
    return report;
}

// QA: fraction of records with the correct answer chosen. QAR: correct
// rationale chosen with the gold answer encoded in the input. Q2AR: both.
inline EvalReport evaluate(const Model& model, const std::vector<VcrStyleRecord>& records,
                           const Vocab& vocab) {
    if (records.empty()) throw DataError("evaluation dataset is empty");
    PhiCache cache;
    std::vector<ExampleChoices> choices;
    choices.reserve(records.size());
    for (const auto& rec : records) {
        ExampleChoices c;
        c.qa_choice = choose(model, rec, vocab, Task::QA, cache);
        c.qar_choice = choose(model, rec, vocab, Task::QAR, cache);
        c.qa_correct = c.qa_choice == rec.correct_answer;
        c.qar_correct = c.qar_choice == rec.correct_rationale;
        choices.push_back(c);
    }
    return report_from_choices(choices);
}

// Sum per-candidate logit margins across ensemble members, then argmax.
inline EvalReport ensemble(const std::vector<Model>& members,
                           const std::vector<VcrStyleRecord>& records, const Vocab& vocab) {
    if (members.empty()) throw CheckpointError("ensemble needs at least one member");
    for (const auto& m : members)
        for (const auto& [name, t] : m.params)
            if (!members[0].params.count(name) ||
                members[0].params.at(name)->shape != t->shape)
                throw CheckpointError("ensemble member checkpoints are shape-incompatible");
    std::vector<PhiCache> caches(members.size());
    std::vector<ExampleChoices> choices;
    auto pick = [&](const VcrStyleRecord& rec, Task task) {
        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < 4; ++c) {
            double score = 0.0;
            for (std::size_t m = 0; m < members.size(); ++m) {
                EncodedInstance inst =
                    task == Task::QA
                        ? encode_qa(rec, vocab, c, members[m].config.variant,
                                    members[m].config.encoder.max_positions)
                        : encode_qar(rec, vocab, c, members[m].config.variant,
                                     members[m].config.encoder.max_positions);
                score += detail::cached_logit_margin(members[m], inst, rec.image, caches[m])
                             ->value[0];
            }
            if (score > best_score) {
                best_score = score;
                best = c;
            }
        }
        return best;
    };
    for (const auto& rec : records) {
        ExampleChoices c;
        c.qa_choice = pick(rec, Task::QA);
        c.qar_choice = pick(rec, Task::QAR);
        c.qa_correct = c.qa_choice == rec.correct_answer;
        c.qar_correct = c.qar_choice == rec.correct_rationale;
        choices.push_back(c);
    }
    return report_from_choices(choices);
}

// ---------------------------------------------------------------------------
// reports

inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline nlohmann::json report_to_json(const EvalReport& r, const std::string& config_digest) {
    return nlohmann::json{{"qa", r.qa_accuracy},
                          {"qar", r.qar_accuracy},
                          {"q2ar", r.q2ar_accuracy},
                          {"n", r.n},
                          {"config_digest", config_digest}};
}

// ---------------------------------------------------------------------------
// grid and ablation runners

struct GridSpec {
    std::vector<double> learning_rates = {1e-3, 3e-4};
    std::vector<int> epochs = {3, 4, 5};
    std::vector<std::uint64_t> seeds = {0, 1};
};

struct GridRun {
    double learning_rate;
    int epochs;
    std::uint64_t seed;
    EvalReport report;
};

inline std::vector<GridRun> run_grid(const ModelConfig& model_config,
                                     const TrainConfig& base, const GridSpec& grid,
                                     const std::vector<VcrStyleRecord>& train_records,
                                     const std::vector<VcrStyleRecord>& val_records,
                                     const Vocab& vocab) {
    std::vector<GridRun> runs;
    for (double lr : grid.learning_rates)
        for (int ep : grid.epochs)
            for (std::uint64_t seed : grid.seeds) {
                TrainConfig cfg = base;
                cfg.learning_rate = lr;
                cfg.epochs = ep;
                cfg.seed = seed;
                ModelConfig mc = model_config;
                mc.seed = seed;
                Model model(mc);
                train(model, train_records, vocab, cfg);
                runs.push_back({lr, ep, seed, evaluate(model, val_records, vocab)});
            }
    return runs;
}

struct AblationRow {
    std::string variant;
    EvalReport report;
};

// Train and evaluate each variant with identical seed and data.
inline std::vector<AblationRow> run_ablation(const std::vector<FusionVariant>& variants,
                                             const ModelConfig& model_config,
                                             const TrainConfig& base,
                                             const std::vector<VcrStyleRecord>& train_records,
                                             const std::vector<VcrStyleRecord>& val_records,
                                             const Vocab& vocab) {
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        ModelConfig mc = model_config;
        mc.variant = v;
        Model model(mc);
        train(model, train_records, vocab, base);
        rows.push_back({variant_name(v), evaluate(model, val_records, vocab)});
    }
    return rows;
}

}  // namespace b2t2
