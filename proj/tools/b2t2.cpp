// Command line driver: synthetic data generation, pretraining, training,
// evaluation, ensembling, hyperparameter grids and ablation runs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "b2t2/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw b2t2::DataError("cannot open " + path);
    json j;
    is >> j;
    return j;
}

std::string dir_of(const std::string& path) {
    auto parent = fs::path(path).parent_path();
    return parent.empty() ? "." : parent.string();
}

b2t2::Vocab load_vocab_near(const std::string& data_path) {
    std::string vocab_path = dir_of(data_path) + "/vocab.txt";
    if (!fs::exists(vocab_path))
        throw b2t2::DataError("vocabulary file not found next to data: " + vocab_path);
    return b2t2::Vocab::load(vocab_path);
}

b2t2::ModelConfig model_config_from_file(const json& j, int vocab_size) {
    b2t2::ModelConfig mc;
    if (j.contains("model")) {
        const auto& m = j["model"];
        auto get_int = [&](const char* key, int& out) {
            if (m.contains(key)) out = m[key].get<int>();
        };
        get_int("num_layers", mc.encoder.num_layers);
        get_int("num_heads", mc.encoder.num_heads);
        get_int("hidden", mc.encoder.hidden);
        get_int("ffn_dim", mc.encoder.ffn_dim);
        get_int("type_vocab", mc.encoder.type_vocab);
        get_int("max_positions", mc.encoder.max_positions);
        if (m.contains("dropout_rate"))
            mc.encoder.dropout_rate = m["dropout_rate"].get<double>();
        get_int("visual_dim", mc.visual_dim);
        get_int("grid_size", mc.grid_size);
        if (m.contains("backbone"))
            mc.backbone = m["backbone"].get<std::string>() == "tiny_cnn"
                              ? b2t2::BackboneKind::tiny_cnn
                              : b2t2::BackboneKind::mean_patch;
        if (m.contains("backbone_frozen"))
            mc.backbone_frozen = m["backbone_frozen"].get<bool>();
        if (m.contains("variant"))
            mc.variant = b2t2::parse_variant(m["variant"].get<std::string>());
        if (m.contains("appended_boxes"))
            mc.variant.appended_boxes = m["appended_boxes"].get<int>();
        if (m.contains("seed")) mc.seed = m["seed"].get<std::uint64_t>();
    }
    mc.encoder.vocab_size = vocab_size;
    return mc;
}

b2t2::TrainConfig train_config_from_file(const json& j) {
    b2t2::TrainConfig tc;
    if (j.contains("train")) {
        const auto& t = j["train"];
        if (t.contains("learning_rate")) tc.learning_rate = t["learning_rate"].get<double>();
        if (t.contains("epochs")) tc.epochs = t["epochs"].get<int>();
        if (t.contains("batch_size")) tc.batch_size = t["batch_size"].get<int>();
        if (t.contains("seed")) tc.seed = t["seed"].get<std::uint64_t>();
        if (t.contains("linear_decay")) tc.linear_decay = t["linear_decay"].get<bool>();
        if (t.contains("task")) tc.task = t["task"].get<std::string>();
        if (t.contains("mlm_rate")) tc.mlm_rate = t["mlm_rate"].get<double>();
        if (t.contains("init_checkpoint"))
            tc.init_checkpoint = t["init_checkpoint"].get<std::string>();
    }
    return tc;
}

b2t2::GridSpec grid_spec_from_file(const json& j) {
    b2t2::GridSpec g;
    if (j.contains("grid")) {
        const auto& gj = j["grid"];
        if (gj.contains("learning_rates"))
            g.learning_rates = gj["learning_rates"].get<std::vector<double>>();
        if (gj.contains("epochs")) g.epochs = gj["epochs"].get<std::vector<int>>();
        if (gj.contains("seeds"))
            g.seeds = gj["seeds"].get<std::vector<std::uint64_t>>();
    }
    return g;
}

void write_report(const b2t2::EvalReport& report, const std::string& digest,
                  const std::string& path) {
    std::ofstream os(path);
    if (!os) throw b2t2::DataError("cannot write report: " + path);
    os << b2t2::report_to_json(report, digest).dump(2) << '\n';
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"B2T2 early-fusion multimodal QA, desk scale"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic grounded-QA dataset");
    std::string gen_spec_path, gen_out_dir;
    gen->add_option("--spec", gen_spec_path, "task spec json")->required();
    gen->add_option("--out", gen_out_dir, "output directory")->required();

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "impostor + masked-LM pretraining");
    std::string pre_data, pre_config, pre_out;
    pre->add_option("--data", pre_data, "captions jsonl")->required();
    pre->add_option("--config", pre_config, "config json")->required();
    pre->add_option("--out", pre_out, "output checkpoint")->required();

    // train
    auto* tr = app.add_subcommand("train", "finetune on QA/QAR records");
    std::string tr_data, tr_config, tr_init, tr_out;
    tr->add_option("--data", tr_data, "records jsonl")->required();
    tr->add_option("--config", tr_config, "config json")->required();
    tr->add_option("--init", tr_init, "initial checkpoint");
    tr->add_option("--out", tr_out, "output checkpoint")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_data, ev_ckpt, ev_task = "q2ar", ev_report;
    ev->add_option("--data", ev_data, "records jsonl")->required();
    ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
    ev->add_option("--task", ev_task, "qa|qar|q2ar");
    ev->add_option("--report", ev_report, "report json path")->required();

    // ensemble
    auto* en = app.add_subcommand("ensemble", "sum class logits across checkpoints");
    std::string en_ckpts, en_data, en_report;
    en->add_option("--ckpts", en_ckpts, "comma-separated checkpoints")->required();
    en->add_option("--data", en_data, "records jsonl")->required();
    en->add_option("--report", en_report, "report json path")->required();

    // grid
    auto* gr = app.add_subcommand("grid", "hyperparameter grid");
    std::string gr_data, gr_config, gr_out;
    gr->add_option("--data", gr_data, "records jsonl")->required();
    gr->add_option("--config", gr_config, "config json")->required();
    gr->add_option("--out", gr_out, "output directory")->required();

    // ablate
    auto* ab = app.add_subcommand("ablate", "train and compare fusion variants");
    std::string ab_data, ab_config, ab_variants = "full,no_boxes,late_fusion", ab_out;
    ab->add_option("--data", ab_data, "records jsonl")->required();
    ab->add_option("--config", ab_config, "config json");
    ab->add_option("--variants", ab_variants, "comma-separated variant names");
    ab->add_option("--out", ab_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (*gen) {
        auto spec = b2t2::spec_from_json(load_json_file(gen_spec_path));
        auto data = b2t2::gen_synthetic(spec);
        fs::create_directories(gen_out_dir);
        b2t2::save_records_jsonl(data.train, gen_out_dir + "/train.jsonl");
        b2t2::save_records_jsonl(data.val, gen_out_dir + "/val.jsonl");
        b2t2::save_captions_jsonl(data.captions, gen_out_dir + "/captions.jsonl");
        data.vocab.save(gen_out_dir + "/vocab.txt");
        std::cout << "wrote " << data.train.size() << " train / " << data.val.size()
                  << " val records, " << data.captions.size() << " captions to "
                  << gen_out_dir << "\n";
    } else if (*pre) {
        auto cfg_json = load_json_file(pre_config);
        auto vocab = load_vocab_near(pre_data);
        auto captions = b2t2::load_captions_jsonl(pre_data);
        b2t2::Model model(model_config_from_file(cfg_json, vocab.size()));
        auto tc = train_config_from_file(cfg_json);
        auto result = b2t2::pretrain(model, captions, vocab, tc);
        b2t2::save_model(model, pre_out);
        std::cout << "pretrained " << result.loss_curve.size() << " steps, final loss "
                  << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back()) << "\n";
    } else if (*tr) {
        auto cfg_json = load_json_file(tr_config);
        auto vocab = load_vocab_near(tr_data);
        auto records = b2t2::load_records_jsonl(tr_data);
        b2t2::Model model(model_config_from_file(cfg_json, vocab.size()));
        auto tc = train_config_from_file(cfg_json);
        if (!tr_init.empty()) tc.init_checkpoint = tr_init;
        auto result = b2t2::train(model, records, vocab, tc);
        b2t2::save_model(model, tr_out);
        std::cout << "trained " << result.loss_curve.size() << " steps, final loss "
                  << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back()) << "\n";
    } else if (*ev) {
        if (ev_task != "qa" && ev_task != "qar" && ev_task != "q2ar")
            throw b2t2::ContractError("eval task must be qa, qar or q2ar");
        auto vocab = load_vocab_near(ev_data);
        auto records = b2t2::load_records_jsonl(ev_data);
        b2t2::Model model = b2t2::load_model(ev_ckpt);
        auto report = b2t2::evaluate(model, records, vocab);
        std::string digest =
            b2t2::fnv1a_hex(b2t2::model_config_to_json(model.config).dump());
        write_report(report, digest, ev_report);
        double headline = ev_task == "qa"    ? report.qa_accuracy
                          : ev_task == "qar" ? report.qar_accuracy
                                             : report.q2ar_accuracy;
        std::cout << ev_task << " accuracy " << headline << " over " << report.n
                  << " records\n";
    } else if (*en) {
        auto paths = split_commas(en_ckpts);
        if (paths.empty()) throw b2t2::CheckpointError("no checkpoints given");
        std::vector<b2t2::Model> members;
        for (const auto& p : paths) members.push_back(b2t2::load_model(p));
        auto vocab = load_vocab_near(en_data);
        auto records = b2t2::load_records_jsonl(en_data);
        auto report = b2t2::ensemble(members, records, vocab);
        std::string digest =
            b2t2::fnv1a_hex(b2t2::model_config_to_json(members[0].config).dump());
        write_report(report, digest, en_report);
        std::cout << "ensemble qa " << report.qa_accuracy << " qar " << report.qar_accuracy
                  << " q2ar " << report.q2ar_accuracy << "\n";
    } else if (*gr) {
        auto cfg_json = load_json_file(gr_config);
        auto vocab = load_vocab_near(gr_data);
        auto records = b2t2::load_records_jsonl(gr_data);
        std::string val_path = dir_of(gr_data) + "/val.jsonl";
        auto val_records =
            fs::exists(val_path) ? b2t2::load_records_jsonl(val_path) : records;
        auto mc = model_config_from_file(cfg_json, vocab.size());
        auto tc = train_config_from_file(cfg_json);
        auto grid = grid_spec_from_file(cfg_json);
        auto runs = b2t2::run_grid(mc, tc, grid, records, val_records, vocab);
        fs::create_directories(gr_out);
        std::string digest = b2t2::fnv1a_hex(cfg_json.dump());
        for (const auto& r : runs) {
            char name[128];
            std::snprintf(name, sizeof(name), "run_lr%g_ep%d_seed%llu.json", r.learning_rate,
                          r.epochs, static_cast<unsigned long long>(r.seed));
            write_report(r.report, digest, gr_out + "/" + name);
            std::cout << name << " qa " << r.report.qa_accuracy << "\n";
        }
    } else if (*ab) {
        json cfg_json = ab_config.empty() ? json::object() : load_json_file(ab_config);
        auto vocab = load_vocab_near(ab_data);
        auto records = b2t2::load_records_jsonl(ab_data);
        std::string val_path = dir_of(ab_data) + "/val.jsonl";
        auto val_records =
            fs::exists(val_path) ? b2t2::load_records_jsonl(val_path) : records;
        auto mc = model_config_from_file(cfg_json, vocab.size());
        auto tc = train_config_from_file(cfg_json);
        std::vector<b2t2::FusionVariant> variants;
        for (const auto& name : split_commas(ab_variants))
            variants.push_back(b2t2::parse_variant(name));
        auto rows = b2t2::run_ablation(variants, mc, tc, records, val_records, vocab);
        fs::create_directories(ab_out);
        std::string digest = b2t2::fnv1a_hex(cfg_json.dump());
        json table = json::array();
        for (const auto& row : rows) {
            json entry = b2t2::report_to_json(row.report, digest);
            entry["variant"] = row.variant;
            table.push_back(entry);
            write_report(row.report, digest, ab_out + "/" + row.variant + ".json");
            std::cout << row.variant << " qa " << row.report.qa_accuracy << "\n";
        }
        std::ofstream os(ab_out + "/ablation.json");
        os << table.dump(2) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const b2t2::DivergedError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const b2t2::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
