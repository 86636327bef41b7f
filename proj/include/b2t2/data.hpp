#pragma once

// Record ingestion, the QA / QAR sequence encodings, MLM masking, impostor
// sampling and the synthetic grounded-QA generator.

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "b2t2/common.hpp"
#include "b2t2/encoder.hpp"
#include "b2t2/fusion.hpp"
#include "b2t2/vision.hpp"

namespace b2t2 {

// ---------------------------------------------------------------------------
// vocabulary

inline const char* kClsToken = "[CLS]";
inline const char* kSepToken = "[SEP]";
inline const char* kPadToken = "[PAD]";
inline const char* kMaskToken = "[MASK]";
inline const char* kImgToken = "[IMG]";  // the [b0] whole-image placeholder
inline const char* kBoxToken = "[BOX]";  // generic box placeholder token

inline constexpr int kImgId = 4;
inline constexpr int kBoxId = 5;

class Vocab {
public:
    std::vector<std::string> tokens;
    std::map<std::string, int> ids;

    Vocab() = default;

    explicit Vocab(const std::vector<std::string>& words) {
        for (const char* s : {kClsToken, kSepToken, kPadToken, kMaskToken, kImgToken,
                              kBoxToken})
            push(s);
        for (const auto& w : words) push(lowercase(w));
    }

    static std::string lowercase(std::string s) {
        for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    }

    void push(const std::string& tok) {
        if (ids.count(tok)) return;
        ids[tok] = static_cast<int>(tokens.size());
        tokens.push_back(tok);
    }

    int size() const { return static_cast<int>(tokens.size()); }

    int id(const std::string& tok) const {
        auto it = ids.find(tok);  // exact hit first, so [CLS] etc. resolve
        if (it == ids.end()) it = ids.find(lowercase(tok));
        if (it == ids.end()) throw VocabError("unknown token: " + tok);
        return it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw VocabError("token id out of range");
        return tokens[id];
    }

    // Whitespace tokenizer with lowercasing.
    std::vector<int> tokenize(const std::string& text) const {
        std::vector<int> out;
        std::istringstream is(text);
        std::string w;
        while (is >> w) out.push_back(id(w));
        return out;
    }

    std::string detokenize(const std::vector<int>& piece_ids) const {
        std::string out;
        for (std::size_t i = 0; i < piece_ids.size(); ++i) {
            if (i) out += ' ';
            out += token(piece_ids[i]);
        }
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw DataError("cannot write vocab file: " + path);
        for (const auto& t : tokens) os << t << '\n';
    }

    static Vocab load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw DataError("cannot open vocab file: " + path);
        Vocab v;
        std::string line;
        while (std::getline(is, line)) v.push(line);
        return v;
    }
};

// ---------------------------------------------------------------------------
// records

// A question/answer token: either a word or a deictic reference to an object.
struct QToken {
    std::string word;
    int ref = -1;  // >= 0: object index

    bool is_ref() const { return ref >= 0; }
    static QToken make_word(std::string w) { return {std::move(w), -1}; }
    static QToken make_ref(int i) { return {"", i}; }
};

struct ObjectAnnotation {
    BoundingBox box;
    std::string label;
};

struct VcrStyleRecord {
    Image image;
    std::vector<ObjectAnnotation> objects;
    std::vector<QToken> question;
    std::array<std::vector<QToken>, 4> answers;
    std::array<std::vector<QToken>, 4> rationales;
    int correct_answer = 0;
    int correct_rationale = 0;

    void validate() const {
        if (correct_answer < 0 || correct_answer > 3 || correct_rationale < 0 ||
            correct_rationale > 3)
            throw DataError("correct answer/rationale index out of range");
        auto check = [&](const std::vector<QToken>& toks) {
            for (const auto& t : toks)
                if (t.is_ref() && t.ref >= static_cast<int>(objects.size()))
                    throw DataError("deictic reference to missing object");
        };
        check(question);
        for (const auto& a : answers) check(a);
        for (const auto& r : rationales) check(r);
    }
};

struct CaptionExample {
    Image image;
    std::vector<std::string> caption;
    // Geometry for the [BOX] markers inside `caption`, in order of
    // occurrence; fused during pretraining exactly like answer-task boxes.
    std::vector<BoundingBox> boxes;
};

enum class Task { QA, QAR };

struct EncodedInstance {
    TokenSequence tokens;
    std::vector<BoundingBox> boxes;
    ReferenceMatrix refmatrix;
    int label = 0;  // 1 iff this candidate is the correct one
    Task task = Task::QA;
};

// ---------------------------------------------------------------------------
// JSONL io

namespace detail {

inline nlohmann::json image_to_json(const Image& img) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < img.height; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < img.width; ++j) {
            nlohmann::json px = nlohmann::json::array();
            for (int c = 0; c < 3; ++c)
                px.push_back(static_cast<int>(std::lround(img.at(i, j, c) * 255.0)));
            row.push_back(std::move(px));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Image image_from_json(const nlohmann::json& j, const std::string& base_dir) {
    if (j.is_string()) {
        std::string path = j.get<std::string>();
        if (!base_dir.empty() && !path.empty() && path[0] != '/')
            path = base_dir + "/" + path;
        return load_ppm(path);
    }
    if (!j.is_array() || j.empty()) throw DataError("bad image field");
    int h = static_cast<int>(j.size());
    int w = static_cast<int>(j[0].size());
    Image img = make_image(h, w);
    for (int i = 0; i < h; ++i)
        for (int jj = 0; jj < w; ++jj)
            for (int c = 0; c < 3; ++c)
                img.at(i, jj, c) = j[i][jj][c].get<int>() / 255.0;
    return img;
}

inline nlohmann::json qtokens_to_json(const std::vector<QToken>& toks) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& t : toks) {
        if (t.is_ref())
            out.push_back(nlohmann::json{{"ref", t.ref}});
        else
            out.push_back(t.word);
    }
    return out;
}

inline std::vector<QToken> qtokens_from_json(const nlohmann::json& j) {
    std::vector<QToken> out;
    for (const auto& e : j) {
        if (e.is_string())
            out.push_back(QToken::make_word(e.get<std::string>()));
        else
            out.push_back(QToken::make_ref(e.at("ref").get<int>()));
    }
    return out;
}

}  // namespace detail

inline nlohmann::json record_to_json(const VcrStyleRecord& rec) {
    nlohmann::json j;
    j["image"] = detail::image_to_json(rec.image);
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : rec.objects)
        objs.push_back(nlohmann::json::array(
            {o.box.x1, o.box.y1, o.box.x2, o.box.y2, o.label}));
    j["objects"] = std::move(objs);
    j["question"] = detail::qtokens_to_json(rec.question);
    nlohmann::json ans = nlohmann::json::array(), rat = nlohmann::json::array();
    for (const auto& a : rec.answers) ans.push_back(detail::qtokens_to_json(a));
    for (const auto& r : rec.rationales) rat.push_back(detail::qtokens_to_json(r));
    j["answers"] = std::move(ans);
    j["rationales"] = std::move(rat);
    j["correct_answer"] = rec.correct_answer;
    j["correct_rationale"] = rec.correct_rationale;
    return j;
}

inline VcrStyleRecord record_from_json(const nlohmann::json& j,
                                       const std::string& base_dir = "") {
    VcrStyleRecord rec;
    rec.image = detail::image_from_json(j.at("image"), base_dir);
    for (const auto& o : j.at("objects")) {
        ObjectAnnotation obj;
        obj.box = {o[0].get<double>(), o[1].get<double>(), o[2].get<double>(),
                   o[3].get<double>()};
        obj.label = o[4].get<std::string>();
        rec.objects.push_back(std::move(obj));
    }
    rec.question = detail::qtokens_from_json(j.at("question"));
    for (int i = 0; i < 4; ++i) {
        rec.answers[i] = detail::qtokens_from_json(j.at("answers")[i]);
        rec.rationales[i] = detail::qtokens_from_json(j.at("rationales")[i]);
    }
    rec.correct_answer = j.at("correct_answer").get<int>();
    rec.correct_rationale = j.at("correct_rationale").get<int>();
    rec.validate();
    return rec;
}

inline void save_records_jsonl(const std::vector<VcrStyleRecord>& recs,
                               const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    for (const auto& r : recs) os << record_to_json(r).dump() << '\n';
}

inline std::vector<VcrStyleRecord> load_records_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path);
    std::string base_dir;
    if (auto pos = path.find_last_of('/'); pos != std::string::npos)
        base_dir = path.substr(0, pos);
    std::vector<VcrStyleRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(record_from_json(nlohmann::json::parse(line), base_dir));
    }
    return out;
}

inline void save_captions_jsonl(const std::vector<CaptionExample>& caps,
                                const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    for (const auto& c : caps) {
        nlohmann::json j;
        j["image"] = detail::image_to_json(c.image);
        j["caption"] = c.caption;
        nlohmann::json boxes = nlohmann::json::array();
        for (const auto& b : c.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
        j["boxes"] = boxes;
        os << j.dump() << '\n';
    }
}

inline std::vector<CaptionExample> load_captions_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path);
    std::vector<CaptionExample> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        CaptionExample c;
        c.image = detail::image_from_json(j.at("image"), "");
        c.caption = j.at("caption").get<std::vector<std::string>>();
        if (j.contains("boxes"))
            for (const auto& b : j.at("boxes"))
                c.boxes.push_back({b.at(0).get<double>(), b.at(1).get<double>(),
                                   b.at(2).get<double>(), b.at(3).get<double>()});
        out.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// sequence encoding

namespace detail {

struct SeqItem {
    int piece_id;
    int type_id;
    int object_ref;  // -2 = none, -1 = whole image box, >= 0 object index
};

// Assemble the final instance from truncation-surviving items, assigning
// box slots in first-use order. Slot 0 is always the whole-image box.
inline EncodedInstance assemble(const Image& img,
                                const std::vector<ObjectAnnotation>& objects,
                                std::vector<SeqItem> items, int label, Task task) {
    EncodedInstance inst;
    inst.label = label;
    inst.task = task;
    inst.boxes.push_back(full_image_box(img));
    std::map<int, int> slot_of_object;
    std::vector<int> slot_per_item(items.size(), -1);
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].object_ref == -2) continue;
        if (items[i].object_ref == -1) {
            slot_per_item[i] = 0;
        } else {
            auto it = slot_of_object.find(items[i].object_ref);
            if (it == slot_of_object.end()) {
                int slot = static_cast<int>(inst.boxes.size());
                inst.boxes.push_back(objects[items[i].object_ref].box);
                it = slot_of_object.emplace(items[i].object_ref, slot).first;
            }
            slot_per_item[i] = it->second;
        }
    }
    int n = static_cast<int>(items.size());
    inst.refmatrix = ReferenceMatrix(static_cast<int>(inst.boxes.size()), n);
    for (int j = 0; j < n; ++j) {
        inst.tokens.piece_ids.push_back(items[j].piece_id);
        inst.tokens.type_ids.push_back(items[j].type_id);
        inst.tokens.attention_mask.push_back(1);
        if (slot_per_item[j] >= 0) inst.refmatrix.at(slot_per_item[j], j) = 1;
    }
    inst.refmatrix.validate();
    return inst;
}

// Render mixed word/reference tokens. A reference becomes class label token
// then box token (label omitted under no_class_labels).
inline void append_qtokens(std::vector<SeqItem>& items, const std::vector<QToken>& toks,
                           const std::vector<ObjectAnnotation>& objects, const Vocab& vocab,
                           int type_id, bool class_labels) {
    for (const auto& t : toks) {
        if (t.is_ref()) {
            if (t.ref >= static_cast<int>(objects.size()))
                throw DataError("deictic reference to missing object");
            if (class_labels)
                items.push_back({vocab.id(objects[t.ref].label), type_id, -2});
            items.push_back({kBoxId, type_id, t.ref});
        } else {
            items.push_back({vocab.id(t.word), type_id, -2});
        }
    }
}

inline EncodedInstance encode_instance(const VcrStyleRecord& rec, const Vocab& vocab,
                                       Task task, int candidate_idx,
                                       const FusionVariant& variant, int max_positions) {
    if (candidate_idx < 0 || candidate_idx > 3)
        throw DataError("candidate index out of range");
    // [CLS], [b0], q..., [SEP] — segment 0
    std::vector<SeqItem> head = {{kClsId, 0, -2}, {kImgId, 0, -1}};
    std::vector<SeqItem> question;
    append_qtokens(question, rec.question, rec.objects, vocab, 0, variant.class_labels);
    std::vector<SeqItem> sep0 = {{kSepId, 0, -2}};
    // answer (and, for QAR, the gold answer before the rationale) — segment 1
    std::vector<SeqItem> body;
    if (task == Task::QA) {
        append_qtokens(body, rec.answers[candidate_idx], rec.objects, vocab, 1,
                       variant.class_labels);
    } else {
        append_qtokens(body, rec.answers[rec.correct_answer], rec.objects, vocab, 1,
                       variant.class_labels);
        append_qtokens(body, rec.rationales[candidate_idx], rec.objects, vocab, 1,
                       variant.class_labels);
    }
    std::vector<SeqItem> sep1 = {{kSepId, 1, -2}};
    // appended boxes: the first p objects, class label then box token
    std::vector<std::vector<SeqItem>> tail_pairs;
    int p = std::min<int>(variant.appended_boxes, static_cast<int>(rec.objects.size()));
    for (int i = 0; i < p; ++i) {
        std::vector<SeqItem> pair;
        if (variant.class_labels) pair.push_back({vocab.id(rec.objects[i].label), 1, -2});
        pair.push_back({kBoxId, 1, i});
        tail_pairs.push_back(std::move(pair));
    }

    auto total = [&]() {
        std::size_t n = head.size() + question.size() + sep0.size() + body.size() +
                        sep1.size();
        for (const auto& pr : tail_pairs) n += pr.size();
        return n;
    };
    std::size_t cap = static_cast<std::size_t>(max_positions);
    // truncation priority: appended boxes from the tail, then body
    // (rationale then answer territory), then question; never [CLS]/[SEP]
    while (total() > cap && !tail_pairs.empty()) tail_pairs.pop_back();
    while (total() > cap && !body.empty()) body.pop_back();
    while (total() > cap && !question.empty()) question.pop_back();
    if (total() > cap) throw DataError("sequence cannot fit max_positions");

    std::vector<SeqItem> items = std::move(head);
    items.insert(items.end(), question.begin(), question.end());
    items.insert(items.end(), sep0.begin(), sep0.end());
    items.insert(items.end(), body.begin(), body.end());
    items.insert(items.end(), sep1.begin(), sep1.end());
    for (const auto& pr : tail_pairs) items.insert(items.end(), pr.begin(), pr.end());

    int label;
    if (task == Task::QA)
        label = candidate_idx == rec.correct_answer ? 1 : 0;
    else
        label = candidate_idx == rec.correct_rationale ? 1 : 0;
    return assemble(rec.image, rec.objects, std::move(items), label, task);
}

}  // namespace detail

inline EncodedInstance encode_qa(const VcrStyleRecord& rec, const Vocab& vocab,
                                 int answer_idx, const FusionVariant& variant,
                                 int max_positions = 64) {
    return detail::encode_instance(rec, vocab, Task::QA, answer_idx, variant, max_positions);
}

inline EncodedInstance encode_qar(const VcrStyleRecord& rec, const Vocab& vocab,
                                  int rationale_idx, const FusionVariant& variant,
                                  int max_positions = 64) {
    return detail::encode_instance(rec, vocab, Task::QAR, rationale_idx, variant,
                                   max_positions);
}

// Caption sequence for pretraining: [CLS], [b0], caption..., [SEP].
inline TokenSequence encode_caption(const std::vector<std::string>& caption,
                                    const Vocab& vocab, int max_positions = 64) {
    TokenSequence seq;
    seq.piece_ids = {kClsId, kImgId};
    std::size_t budget = static_cast<std::size_t>(max_positions) - 1;
    for (const auto& w : caption) {
        if (seq.piece_ids.size() >= budget) break;
        seq.piece_ids.push_back(vocab.id(w));
    }
    seq.piece_ids.push_back(kSepId);
    seq.type_ids.assign(seq.piece_ids.size(), 0);
    seq.attention_mask.assign(seq.piece_ids.size(), 1);
    return seq;
}

// ---------------------------------------------------------------------------
// MLM masking and impostor sampling

struct MlmTarget {
    int position;
    int original_piece_id;
};

inline std::pair<TokenSequence, std::vector<MlmTarget>> mask_tokens(const TokenSequence& seq,
                                                                    double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError("mask rate must be in [0,1)");
    TokenSequence masked = seq;
    std::vector<MlmTarget> targets;
    std::bernoulli_distribution pick(rate);
    for (int j = 0; j < seq.length(); ++j) {
        int id = seq.piece_ids[j];
        if (id == kClsId || id == kSepId || id == kPadId || id == kImgId || id == kBoxId)
            continue;
        if (rate > 0.0 && pick(rng)) {
            targets.push_back({j, id});
            masked.piece_ids[j] = kMaskId;
        }
    }
    return {std::move(masked), std::move(targets)};
}

inline int sample_impostor(std::size_t corpus_size, int positive_idx, Rng& rng) {
    if (corpus_size < 2) throw DataError("impostor sampling needs a corpus of >= 2 captions");
    std::uniform_int_distribution<int> dist(0, static_cast<int>(corpus_size) - 2);
    int idx = dist(rng);
    if (idx >= positive_idx) ++idx;
    return idx;
}

// ---------------------------------------------------------------------------
// synthetic grounded-QA generator

struct SyntheticTaskSpec {
    std::uint64_t seed = 0;
    int num_train = 2000;
    int num_val = 500;
    int image_size = 32;
    std::vector<std::string> colors = {"red",  "green",   "blue",  "yellow",
                                       "magenta", "cyan", "orange", "white"};
    int distractors = 3;  // objects per image = distractors + 1
    std::vector<int> templates = {0, 1};
};

inline SyntheticTaskSpec spec_from_json(const nlohmann::json& j) {
    SyntheticTaskSpec s;
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("num_train")) s.num_train = j["num_train"].get<int>();
    if (j.contains("num_val")) s.num_val = j["num_val"].get<int>();
    if (j.contains("image_size")) s.image_size = j["image_size"].get<int>();
    if (j.contains("colors")) s.colors = j["colors"].get<std::vector<std::string>>();
    if (j.contains("distractors")) s.distractors = j["distractors"].get<int>();
    if (j.contains("templates")) s.templates = j["templates"].get<std::vector<int>>();
    return s;
}

struct SyntheticData {
    std::vector<VcrStyleRecord> train;
    std::vector<VcrStyleRecord> val;
    std::vector<CaptionExample> captions;
    Vocab vocab;
};

namespace detail {

inline const std::map<std::string, std::array<double, 3>>& color_palette() {
    static const std::map<std::string, std::array<double, 3>> palette = {
        {"red", {0.9, 0.1, 0.1}},    {"green", {0.1, 0.8, 0.1}},
        {"blue", {0.15, 0.25, 0.9}}, {"yellow", {0.9, 0.9, 0.1}},
        {"magenta", {0.9, 0.1, 0.9}}, {"cyan", {0.1, 0.85, 0.85}},
        {"orange", {0.95, 0.55, 0.1}}, {"white", {0.95, 0.95, 0.95}},
    };
    return palette;
}

inline const std::vector<std::string>& glyph_labels() {
    static const std::vector<std::string> labels = {"square", "disc", "ring", "bar"};
    return labels;
}

inline void draw_glyph(Image& img, const BoundingBox& b, const std::string& label,
                       const std::array<double, 3>& rgb) {
    int x1 = static_cast<int>(b.x1), y1 = static_cast<int>(b.y1);
    int x2 = static_cast<int>(b.x2), y2 = static_cast<int>(b.y2);
    double cx = (b.x1 + b.x2) / 2.0, cy = (b.y1 + b.y2) / 2.0;
    double r = std::min(b.x2 - b.x1, b.y2 - b.y1) / 2.0;
    for (int i = y1; i < y2; ++i)
        for (int j = x1; j < x2; ++j) {
            bool on = true;
            double dx = j + 0.5 - cx, dy = i + 0.5 - cy;
            double dist = std::sqrt(dx * dx + dy * dy);
            if (label == "disc")
                on = dist <= r;
            else if (label == "ring")
                on = dist <= r && dist >= r * 0.55;
            else if (label == "bar")
                on = std::abs(dy) <= (b.y2 - b.y1) * 0.2;
            if (on)
                for (int c = 0; c < 3; ++c) img.at(i, j, c) = rgb[c];
        }
}

struct SceneObject {
    BoundingBox box;
    std::string label;
    std::string color;
};

// One scene: num_objects glyphs with pairwise-distinct colors, one per grid
// cell, shuffled cell order so color never correlates with position.
inline std::pair<Image, std::vector<SceneObject>> make_scene(const SyntheticTaskSpec& spec,
                                                             Rng& rng) {
    int num_objects = spec.distractors + 1;
    int cells_per_side = 2;
    while (cells_per_side * cells_per_side < num_objects) ++cells_per_side;
    int cell = spec.image_size / cells_per_side;
    if (cell < 6) throw DataError("image_size too small for the requested object count");

    std::vector<std::string> colors = spec.colors;
    std::shuffle(colors.begin(), colors.end(), rng);
    colors.resize(num_objects);
    std::vector<int> cell_ids(cells_per_side * cells_per_side);
    for (std::size_t i = 0; i < cell_ids.size(); ++i) cell_ids[i] = static_cast<int>(i);
    std::shuffle(cell_ids.begin(), cell_ids.end(), rng);

    Image img = make_image(spec.image_size, spec.image_size, 0.05);
    std::vector<SceneObject> objects;
    std::uniform_int_distribution<int> jitter(0, std::max(1, cell / 4));
    std::uniform_int_distribution<int> label_pick(0,
                                                  static_cast<int>(glyph_labels().size()) - 1);
    for (int i = 0; i < num_objects; ++i) {
        int ci = cell_ids[i] / cells_per_side, cj = cell_ids[i] % cells_per_side;
        int gw = cell - 2, gh = cell - 2;
        int x = cj * cell + 1 + jitter(rng) % std::max(1, cell - gw - 1);
        int y = ci * cell + 1 + jitter(rng) % std::max(1, cell - gh - 1);
        SceneObject obj;
        obj.box = {static_cast<double>(x), static_cast<double>(y),
                   static_cast<double>(std::min(x + gw, spec.image_size)),
                   static_cast<double>(std::min(y + gh, spec.image_size))};
        obj.label = glyph_labels()[label_pick(rng)];
        obj.color = colors[i];
        draw_glyph(img, obj.box, obj.label, color_palette().at(obj.color));
        objects.push_back(std::move(obj));
    }
    return {std::move(img), std::move(objects)};
}

inline std::vector<QToken> question_tokens(int template_id, int asked_object) {
    std::vector<QToken> q;
    auto words = [&](std::initializer_list<const char*> ws) {
        for (const char* w : ws) q.push_back(QToken::make_word(w));
    };
    if (template_id == 1) {
        words({"which", "color", "does"});
        q.push_back(QToken::make_ref(asked_object));
        words({"have"});
    } else {
        words({"what", "color", "is"});
        q.push_back(QToken::make_ref(asked_object));
    }
    return q;
}

inline VcrStyleRecord make_record(const SyntheticTaskSpec& spec, Rng& rng) {
    auto [img, objects] = make_scene(spec, rng);
    int num_objects = static_cast<int>(objects.size());
    std::uniform_int_distribution<int> obj_pick(0, num_objects - 1);
    int asked = obj_pick(rng);
    std::uniform_int_distribution<int> tpl_pick(0,
                                                static_cast<int>(spec.templates.size()) - 1);
    int tpl = spec.templates[tpl_pick(rng)];

    VcrStyleRecord rec;
    rec.image = std::move(img);
    for (const auto& o : objects) rec.objects.push_back({o.box, o.label});
    rec.question = question_tokens(tpl, asked);

    // candidate answers: the colors present in the scene, shuffled — the
    // whole image alone gives no information about which one is correct
    if (num_objects < 4) throw DataError("need at least 4 objects for 4 answer candidates");
    std::vector<int> order(num_objects);
    for (int i = 0; i < num_objects; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(4);
    for (int i = 0; i < 4; ++i)
        rec.answers[i] = {QToken::make_word(objects[order[i]].color)};
    rec.correct_answer = -1;
    for (int i = 0; i < 4; ++i)
        if (order[i] == asked) rec.correct_answer = i;
    if (rec.correct_answer < 0) {
        // asked object's color fell outside the 4 sampled slots; force it in
        std::uniform_int_distribution<int> slot_pick(0, 3);
        rec.correct_answer = slot_pick(rng);
        rec.answers[rec.correct_answer] = {QToken::make_word(objects[asked].color)};
    }

    std::vector<int> rorder(num_objects);
    for (int i = 0; i < num_objects; ++i) rorder[i] = i;
    std::shuffle(rorder.begin(), rorder.end(), rng);
    rorder.resize(4);
    rec.correct_rationale = -1;
    for (int i = 0; i < 4; ++i) {
        rec.rationales[i] = {QToken::make_word("because"), QToken::make_word("it"),
                             QToken::make_word("shows"),
                             QToken::make_word(objects[rorder[i]].color)};
        if (rorder[i] == asked) rec.correct_rationale = i;
    }
    if (rec.correct_rationale < 0) {
        std::uniform_int_distribution<int> slot_pick(0, 3);
        rec.correct_rationale = slot_pick(rng);
        rec.rationales[rec.correct_rationale] = {
            QToken::make_word("because"), QToken::make_word("it"),
            QToken::make_word("shows"), QToken::make_word(objects[asked].color)};
    }
    return rec;
}

inline CaptionExample make_caption(const SyntheticTaskSpec& spec, Rng& rng) {
    auto [img, objects] = make_scene(spec, rng);
    CaptionExample cap;
    cap.image = std::move(img);
    // one object per caption keeps pretraining sequences short while still
    // forcing the impostor/MLM objectives to read the referenced crop
    std::uniform_int_distribution<int> pick(0, static_cast<int>(objects.size()) - 1);
    const SceneObject& obj = objects[pick(rng)];
    cap.caption = {"a", "picture", "with", obj.color, obj.label, kBoxToken};
    cap.boxes.push_back(obj.box);
    return cap;
}

}  // namespace detail

inline Vocab synthetic_vocab(const SyntheticTaskSpec& spec) {
    std::vector<std::string> words = {"what", "color", "is",   "which", "does", "have",
                                      "because", "it",  "shows", "a", "picture", "with",
                                      "and"};
    for (const auto& c : spec.colors) words.push_back(c);
    for (const auto& l : detail::glyph_labels()) words.push_back(l);
    return Vocab(words);
}

// Deterministic given spec.seed. Each image holds several glyphs of
// pairwise-distinct colors; the question asks for the color of one
// referenced glyph, the four answers are colors present in the scene.
inline SyntheticData gen_synthetic(const SyntheticTaskSpec& spec) {
    if (static_cast<int>(spec.colors.size()) < spec.distractors + 1 ||
        spec.colors.size() < 4)
        throw DataError("spec needs at least max(4, objects) distinct colors");
    for (const auto& c : spec.colors)
        if (!detail::color_palette().count(c)) throw DataError("unknown color name: " + c);
    if (spec.distractors + 1 < 4)
        throw DataError("need at least 4 objects per image (distractors >= 3)");

    SyntheticData out;
    out.vocab = synthetic_vocab(spec);
    Rng train_rng = make_rng(spec.seed, 1);
    Rng val_rng = make_rng(spec.seed, 2);
    Rng cap_rng = make_rng(spec.seed, 3);
    for (int i = 0; i < spec.num_train; ++i)
        out.train.push_back(detail::make_record(spec, train_rng));
    for (int i = 0; i < spec.num_val; ++i)
        out.val.push_back(detail::make_record(spec, val_rng));
    int num_captions = std::max(spec.num_train, 64);
    for (int i = 0; i < num_captions; ++i)
        out.captions.push_back(detail::make_caption(spec, cap_rng));
    return out;
}

}  // namespace b2t2
