#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmswitch/common.hpp"
#include "lmswitch/lm.hpp"
#include "lmswitch/search.hpp"
#include "lmswitch/switch.hpp"
#include "lmswitch/transfer.hpp"

namespace lmswitch {

namespace fs = std::filesystem;

// MAT1: "MAT1", rows and cols as little-endian u32, then rows*cols
// little-endian f64 values in row-major order.
std::string encode_mat1(const Matrix& m);
Matrix decode_mat1(const std::string& bytes);
void write_mat1(const fs::path& path, const Matrix& m);
Matrix read_mat1(const fs::path& path);

struct CorpusRecord {
    std::string text;
    int label = 1;
};

struct CorpusIssue {
    std::size_t line = 0;
    std::string message;
};

struct CorpusReadResult {
    std::vector<CorpusRecord> records;
    std::vector<CorpusIssue> issues;  // skipped lines
};

/// One JSON object per line with "text" and "label" (1 or -1). Blank lines are
/// ignored. Malformed lines are skipped and reported, or throw InputError when
/// `strict`.
CorpusReadResult read_corpus(const fs::path& path, bool strict = false);
void write_corpus(const fs::path& path, const std::vector<CorpusRecord>& records);

struct RunConfig {
    std::optional<std::string> base_lm_dir;
    std::optional<std::string> switch_path;
    double eps0 = kDefaultEps0;
    double k = 5.0;
    double top_p = 0.9;
    int max_tokens = 20;
    int num_samples = 1;
    std::uint64_t seed = 0;
    std::string scorer_mode = "lexicon";
    std::optional<std::string> scorer_url;
    std::optional<std::string> lexicon_path;
};

/// key=value lines; '#' starts a comment. Unknown keys and malformed values
/// throw InputError naming the line.
RunConfig parse_run_config(const std::string& text);
RunConfig read_run_config(const fs::path& path);

/// token<TAB>weight per line.
std::map<std::string, double> read_lexicon(const fs::path& path);
void write_lexicon(const fs::path& path, const std::map<std::string, double>& lexicon);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

/// Model directory: E.mat1, context.mat1 and vocab.txt (line number = id).
void save_lm(const fs::path& dir, const SoftmaxLm& lm);
SoftmaxLm load_lm(const fs::path& dir);

/// Switch directory: W.mat1, W_dummy.mat1 and switch.json (eps0, dim,
/// decode_scale, vocab fingerprint).
void save_switch(const fs::path& dir, const SwitchMatrix& sw, std::uint64_t vocab_fingerprint);
SwitchMatrix load_switch(const fs::path& dir, std::optional<std::uint64_t> expected_fingerprint = std::nullopt);

/// Phi.mat1 plus result.json.
void save_search_result(const fs::path& dir, const SearchResult& r);
SearchResult load_search_result(const fs::path& dir);

/// H.mat1 plus map.json.
void save_embedding_map(const fs::path& dir, const EmbeddingMap& map);
EmbeddingMap load_embedding_map(const fs::path& dir);

}  // namespace lmswitch
