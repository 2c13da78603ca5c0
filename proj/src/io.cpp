#include "lmswitch/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lmswitch/linalg.hpp"

namespace lmswitch {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'A', 'T', '1'};
constexpr std::size_t kHeaderBytes = 12;

void put_le(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
    return v;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& s, const std::string& what) {
    T v{};
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) throw InputError("invalid value '" + s + "' for " + what);
    return v;
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw InputError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

template <class T>
T field(const json& j, const char* key, const fs::path& path) {
    if (!j.contains(key)) throw InputError(path.string() + " lacks field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw InputError(path.string() + " has a malformed field '" + key + "'");
    }
}

}  // namespace

std::string encode_mat1(const Matrix& m) {
    if (!all_finite(m)) throw InputError("MAT1 matrices must be finite");
    if (m.rows() > 0xffffffffLL || m.cols() > 0xffffffffLL) throw InputError("matrix too large for MAT1");
    std::string out(kMagic, 4);
    out.reserve(kHeaderBytes + 8 * static_cast<std::size_t>(m.size()));
    put_le(out, static_cast<std::uint64_t>(m.rows()), 4);
    put_le(out, static_cast<std::uint64_t>(m.cols()), 4);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) put_le(out, std::bit_cast<std::uint64_t>(m(i, j)), 8);
    return out;
}

Matrix decode_mat1(const std::string& bytes) {
    for (std::size_t i = 0; i < 4; ++i)
        if (i >= bytes.size() || bytes[i] != kMagic[i]) throw FormatError("bad MAT1 magic", i);
    if (bytes.size() < kHeaderBytes) throw FormatError("truncated MAT1 header", bytes.size());
    const std::uint64_t rows = get_le(bytes, 4, 4), cols = get_le(bytes, 8, 4);
    const std::uint64_t expected = kHeaderBytes + 8 * rows * cols;
    if (bytes.size() < expected) throw FormatError("truncated MAT1 payload", bytes.size());
    if (bytes.size() > expected) throw FormatError("trailing bytes after MAT1 payload", expected);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t pos = kHeaderBytes;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j, pos += 8) {
            m(i, j) = std::bit_cast<double>(get_le(bytes, pos, 8));
            if (!std::isfinite(m(i, j))) throw FormatError("non-finite MAT1 entry", pos);
        }
    }
    return m;
}

void write_mat1(const fs::path& path, const Matrix& m) { write_text(path, encode_mat1(m)); }

Matrix read_mat1(const fs::path& path) {
    try {
        return decode_mat1(read_text(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
    if (!out) throw InputError("write failed for " + path.string());
}

CorpusReadResult read_corpus(const fs::path& path, bool strict) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open corpus " + path.string());
    CorpusReadResult out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (trim(line).empty()) continue;
        std::string problem;
        try {
            const json j = json::parse(line);
            if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
                problem = "missing string field \"text\"";
            } else if (!j.contains("label") || !j["label"].is_number_integer()) {
                problem = "missing integer field \"label\"";
            } else {
                const auto label = j["label"].get<long long>();
                auto text = j["text"].get<std::string>();
                if (label != 1 && label != -1) {
                    problem = "invalid label " + std::to_string(label) + " (expected 1 or -1)";
                } else if (trim(text).empty()) {
                    problem = "empty text";
                } else {
                    out.records.push_back({std::move(text), static_cast<int>(label)});
                }
            }
        } catch (const json::exception& e) {
            problem = std::string("malformed JSON: ") + e.what();
        }
        if (problem.empty()) continue;
        if (strict) throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + problem);
        out.issues.push_back({lineno, problem});
    }
    return out;
}

void write_corpus(const fs::path& path, const std::vector<CorpusRecord>& records) {
    std::string text;
    for (const auto& r : records) text += json{{"text", r.text}, {"label", r.label}}.dump() + '\n';
    write_text(path, text);
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string raw;
    for (int lineno = 1; std::getline(in, raw); ++lineno) {
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "config line " + std::to_string(lineno);
        if (eq == std::string::npos) throw InputError(where + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string what = "'" + key + "' (" + where + ")";
        if (key == "base_lm_dir") {
            cfg.base_lm_dir = value;
        } else if (key == "switch_path") {
            cfg.switch_path = value;
        } else if (key == "eps0") {
            cfg.eps0 = parse_number<double>(value, what);
        } else if (key == "k") {
            cfg.k = parse_number<double>(value, what);
        } else if (key == "top_p") {
            cfg.top_p = parse_number<double>(value, what);
        } else if (key == "max_tokens") {
            cfg.max_tokens = parse_number<int>(value, what);
        } else if (key == "num_samples") {
            cfg.num_samples = parse_number<int>(value, what);
        } else if (key == "seed") {
            cfg.seed = parse_number<std::uint64_t>(value, what);
        } else if (key == "scorer_mode") {
            if (value != "lexicon" && value != "http") throw InputError("scorer_mode must be lexicon or http (" + where + ")");
            cfg.scorer_mode = value;
        } else if (key == "scorer_url") {
            cfg.scorer_url = value;
        } else if (key == "lexicon_path") {
            cfg.lexicon_path = value;
        } else {
            throw InputError("unknown config key '" + key + "' (" + where + ")");
        }
    }
    if (!(cfg.eps0 > 0.0) || !std::isfinite(cfg.eps0)) throw InputError("eps0 must be positive");
    if (!(cfg.top_p > 0.0 && cfg.top_p <= 1.0)) throw InputError("top_p must lie in (0, 1]");
    if (cfg.max_tokens < 1) throw InputError("max_tokens must be at least 1");
    if (cfg.num_samples < 1) throw InputError("num_samples must be at least 1");
    return cfg;
}

RunConfig read_run_config(const fs::path& path) { return parse_run_config(read_text(path)); }

std::map<std::string, double> read_lexicon(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::map<std::string, double> out;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (trim(line).empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected token<TAB>weight");
        const std::string what = "lexicon weight (" + path.string() + ":" + std::to_string(lineno) + ")";
        out[trim(line.substr(0, tab))] = parse_number<double>(trim(line.substr(tab + 1)), what);
    }
    return out;
}

void write_lexicon(const fs::path& path, const std::map<std::string, double>& lexicon) {
    std::ostringstream os;
    os.precision(17);
    for (const auto& [tok, w] : lexicon) os << tok << '\t' << w << '\n';
    write_text(path, os.str());
}

void save_lm(const fs::path& dir, const SoftmaxLm& lm) {
    write_mat1(dir / "E.mat1", lm.E());
    write_mat1(dir / "context.mat1", lm.context_table());
    std::string vocab;
    for (const auto& t : lm.vocab().tokens()) vocab += t + '\n';
    write_text(dir / "vocab.txt", vocab);
}

SoftmaxLm load_lm(const fs::path& dir) {
    std::istringstream in(read_text(dir / "vocab.txt"));
    std::vector<std::string> tokens;
    for (std::string line; std::getline(in, line);) tokens.push_back(line);
    SoftmaxLm lm(Vocab::from_tokens(std::move(tokens)), read_mat1(dir / "E.mat1"), read_mat1(dir / "context.mat1"));
    lm.set_trained(true);
    return lm;
}

void save_switch(const fs::path& dir, const SwitchMatrix& sw, std::uint64_t vocab_fingerprint) {
    sw.validate();
    write_mat1(dir / "W.mat1", sw.W);
    write_mat1(dir / "W_dummy.mat1", sw.W_dummy.size() ? sw.W_dummy : Matrix::Zero(sw.dim(), sw.dim()));
    const json meta{{"eps0", sw.eps0},
                    {"dim", sw.dim()},
                    {"decode_scale", sw.decode_scale},
                    {"vocab_fingerprint", vocab_fingerprint},
                    {"lambda_max", sw.lambda_max()}};
    write_text(dir / "switch.json", meta.dump(2) + '\n');
}

SwitchMatrix load_switch(const fs::path& dir, std::optional<std::uint64_t> expected_fingerprint) {
    const fs::path meta_path = dir / "switch.json";
    const json meta = read_json(meta_path);
    SwitchMatrix sw;
    sw.W = read_mat1(dir / "W.mat1");
    sw.W_dummy = read_mat1(dir / "W_dummy.mat1");
    sw.eps0 = field<double>(meta, "eps0", meta_path);
    sw.decode_scale = field<double>(meta, "decode_scale", meta_path);
    if (field<long>(meta, "dim", meta_path) != sw.dim()) throw InputError(meta_path.string() + ": dim disagrees with W.mat1");
    if (expected_fingerprint && field<std::uint64_t>(meta, "vocab_fingerprint", meta_path) != *expected_fingerprint)
        throw InputError("switch in " + dir.string() + " was trained against a different vocabulary");
    sw.validate();
    return sw;
}

void save_search_result(const fs::path& dir, const SearchResult& r) {
    write_mat1(dir / "Phi.mat1", r.Phi);
    json meta{{"seed", r.seed},
              {"d_s", r.d_s},
              {"d_c", r.d_c},
              {"initial_loss", r.initial_loss},
              {"final_loss", r.final_loss},
              {"steps_used", r.steps_used},
              {"converged", r.converged},
              {"lr_reductions", r.lr_reductions},
              {"max_gradient_error", r.max_gradient_error},
              {"terms",
               {{"norm", r.terms.norm},
                {"dist", r.terms.dist},
                {"independence", r.terms.independence},
                {"conditional", r.terms.conditional}}}};
    meta["error"] = r.error ? json(*r.error) : json(nullptr);
    write_text(dir / "result.json", meta.dump(2) + '\n');
}

SearchResult load_search_result(const fs::path& dir) {
    const fs::path meta_path = dir / "result.json";
    const json meta = read_json(meta_path);
    SearchResult r;
    r.Phi = read_mat1(dir / "Phi.mat1");
    r.seed = field<std::uint64_t>(meta, "seed", meta_path);
    r.d_s = field<int>(meta, "d_s", meta_path);
    r.d_c = field<int>(meta, "d_c", meta_path);
    r.initial_loss = field<double>(meta, "initial_loss", meta_path);
    r.final_loss = field<double>(meta, "final_loss", meta_path);
    r.steps_used = field<long>(meta, "steps_used", meta_path);
    r.converged = field<bool>(meta, "converged", meta_path);
    r.lr_reductions = field<int>(meta, "lr_reductions", meta_path);
    r.max_gradient_error = field<double>(meta, "max_gradient_error", meta_path);
    if (r.Phi.rows() != r.d_s + r.d_c) throw InputError(dir.string() + ": Phi.mat1 rows disagree with d_s + d_c");
    r.terms = loss_terms(r.Phi, r.d_s);
    if (meta.contains("error") && meta["error"].is_string()) r.error = meta["error"].get<std::string>();
    return r;
}

void save_embedding_map(const fs::path& dir, const EmbeddingMap& map) {
    write_mat1(dir / "H.mat1", map.H);
    const json meta{{"anchor_count", map.anchor_count},
                    {"fit_residual", map.fit_residual},
                    {"oracle_residual", map.oracle_residual},
                    {"oracle_gap", map.oracle_gap}};
    write_text(dir / "map.json", meta.dump(2) + '\n');
}

EmbeddingMap load_embedding_map(const fs::path& dir) {
    const fs::path meta_path = dir / "map.json";
    const json meta = read_json(meta_path);
    EmbeddingMap map;
    map.H = read_mat1(dir / "H.mat1");
    map.anchor_count = field<int>(meta, "anchor_count", meta_path);
    map.fit_residual = field<double>(meta, "fit_residual", meta_path);
    map.oracle_residual = field<double>(meta, "oracle_residual", meta_path);
    map.oracle_gap = field<double>(meta, "oracle_gap", meta_path);
    return map;
}

}  // namespace lmswitch
