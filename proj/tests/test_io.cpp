#include "doctest.h"

#include <bit>
#include <cmath>
#include <limits>
#include <random>

#include "lmswitch/io.hpp"
#include "lmswitch/linalg.hpp"
#include "support.hpp"

using namespace lmswitch;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("lmswitch_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a.data()[i]) != std::bit_cast<std::uint64_t>(b.data()[i])) return false;
    return true;
}

}  // namespace

TEST_CASE("MAT1 layout of a 1x1 matrix") {
    Matrix m(1, 1);
    m(0, 0) = 0.5;
    const std::string bytes = encode_mat1(m);
    REQUIRE(bytes.size() == 20);
    CHECK(bytes.substr(0, 4) == "MAT1");
    CHECK(bytes.substr(4, 8) == std::string("\x01\x00\x00\x00\x01\x00\x00\x00", 8));
    // 0.5 = 0x3FE0000000000000
    CHECK(bytes.substr(12) == std::string("\x00\x00\x00\x00\x00\x00\xe0\x3f", 8));
}

TEST_CASE("MAT1 row-major order and round trips") {
    Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    const std::string bytes = encode_mat1(m);
    CHECK(std::bit_cast<double>(*reinterpret_cast<const std::uint64_t*>(bytes.data() + 12 + 8)) == 2.0);

    std::mt19937_64 rng(11);
    const Matrix r = gaussian_matrix(8, 8, 1.0, rng);
    CHECK(bitwise_equal(decode_mat1(encode_mat1(r)), r));

    Matrix odd(1, 4);
    odd << -0.0, std::numeric_limits<double>::denorm_min(), -std::numeric_limits<double>::max(), 1e-310;
    const Matrix back = decode_mat1(encode_mat1(odd));
    CHECK(bitwise_equal(back, odd));
    CHECK(std::signbit(back(0, 0)));

    CHECK(decode_mat1(encode_mat1(Matrix(0, 5))).cols() == 5);

    const fs::path dir = scratch_dir("mat1");
    write_mat1(dir / "r.mat1", r);
    CHECK(bitwise_equal(read_mat1(dir / "r.mat1"), r));
    fs::remove_all(dir);
}

TEST_CASE("MAT1 rejects damaged input") {
    Matrix m = Matrix::Ones(2, 2);
    const std::string good = encode_mat1(m);
    auto offset_of = [](const std::string& bytes) {
        try {
            decode_mat1(bytes);
        } catch (const FormatError& e) {
            return static_cast<long>(e.offset());
        }
        return -1L;
    };
    std::string bad = good;
    bad[2] = 'X';
    CHECK(offset_of(bad) == 2);
    CHECK(offset_of(good.substr(0, 9)) == 9);
    CHECK(offset_of(good.substr(0, good.size() - 3)) == static_cast<long>(good.size() - 3));
    CHECK(offset_of(good + "z") == static_cast<long>(good.size()));
    CHECK(offset_of("") == 0);
    Matrix inf = m;
    inf(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(encode_mat1(inf), InputError);
    CHECK_THROWS_AS(read_mat1("/nonexistent/x.mat1"), InputError);
}

TEST_CASE("corpus reader") {
    const fs::path dir = scratch_dir("corpus");
    write_text(dir / "c.jsonl",
               "{\"text\":\"a b\",\"label\":1}\n"
               "\n"
               "{\"text\":\"c\",\"label\":0}\n"
               "not json\n"
               "{\"text\":\"d e\",\"label\":-1}\n"
               "{\"text\":\"\",\"label\":1}\n");
    const auto r = read_corpus(dir / "c.jsonl");
    REQUIRE(r.records.size() == 2);
    CHECK(r.records[0].text == "a b");
    CHECK(r.records[0].label == 1);
    CHECK(r.records[1].label == -1);
    REQUIRE(r.issues.size() == 3);
    CHECK(r.issues[0].line == 3);
    CHECK(r.issues[0].message.find("label") != std::string::npos);
    CHECK(r.issues[1].line == 4);
    CHECK(r.issues[2].line == 6);
    CHECK_THROWS_AS(read_corpus(dir / "c.jsonl", true), InputError);

    write_text(dir / "empty.jsonl", "");
    CHECK(read_corpus(dir / "empty.jsonl", true).records.empty());
    CHECK_THROWS_AS(read_corpus(dir / "missing.jsonl"), InputError);

    write_corpus(dir / "w.jsonl", {{"x \"y\"", 1}, {"z", -1}});
    const auto w = read_corpus(dir / "w.jsonl", true);
    REQUIRE(w.records.size() == 2);
    CHECK(w.records[0].text == "x \"y\"");
    fs::remove_all(dir);
}

TEST_CASE("run config") {
    const RunConfig d = parse_run_config("");
    CHECK(d.eps0 == 1e-3);
    CHECK(d.k == 5.0);
    CHECK(d.top_p == 0.9);
    CHECK(d.max_tokens == 20);
    CHECK(d.scorer_mode == "lexicon");
    CHECK_FALSE(d.base_lm_dir.has_value());

    const RunConfig c = parse_run_config(
        "# comment\n"
        "base_lm_dir = models/base\n"
        "switch_path=models/sw\n"
        "k=2.5\n"
        "num_samples = 3  # inline\n"
        "seed=7\n"
        "scorer_mode=http\n"
        "scorer_url=http://localhost:9/score\n"
        "lexicon_path=lex.tsv\n");
    CHECK(*c.base_lm_dir == "models/base");
    CHECK(*c.switch_path == "models/sw");
    CHECK(c.k == 2.5);
    CHECK(c.num_samples == 3);
    CHECK(c.seed == 7);
    CHECK(c.scorer_mode == "http");
    CHECK(*c.scorer_url == "http://localhost:9/score");
    CHECK(*c.lexicon_path == "lex.tsv");

    CHECK_THROWS_AS(parse_run_config("colour=blue\n"), InputError);
    CHECK_THROWS_AS(parse_run_config("k\n"), InputError);
    CHECK_THROWS_AS(parse_run_config("k=fast\n"), InputError);
    CHECK_THROWS_AS(parse_run_config("top_p=0\n"), InputError);
    CHECK_THROWS_AS(parse_run_config("scorer_mode=oracle\n"), InputError);
}

TEST_CASE("lexicon file") {
    const fs::path dir = scratch_dir("lex");
    write_lexicon(dir / "l.tsv", {{"bad", 1.0}, {"meh", 0.25}});
    const auto lex = read_lexicon(dir / "l.tsv");
    CHECK(lex.size() == 2);
    CHECK(lex.at("meh") == 0.25);
    write_text(dir / "bad.tsv", "bad 1\n");
    CHECK_THROWS_AS(read_lexicon(dir / "bad.tsv"), InputError);
    fs::remove_all(dir);
}

TEST_CASE("model, switch, search and map directories round trip") {
    const fs::path dir = scratch_dir("dirs");
    std::mt19937_64 rng(5);
    const Vocab v = Vocab::build({"x y z", "x y"}, 10);
    const auto V = static_cast<Eigen::Index>(v.size());
    const SoftmaxLm lm(v, gaussian_matrix(3, V, 0.1, rng), gaussian_matrix(3, V, 0.1, rng));
    save_lm(dir / "lm", lm);
    const SoftmaxLm back = load_lm(dir / "lm");
    CHECK(back.vocab().tokens() == v.tokens());
    CHECK(bitwise_equal(back.E(), lm.E()));
    CHECK(bitwise_equal(back.context_table(), lm.context_table()));

    SwitchMatrix sw;
    sw.W = gaussian_matrix(3, 3, 1.0, rng);
    sw.W_dummy = gaussian_matrix(3, 3, 1.0, rng);
    sw.decode_scale = 0.1;
    save_switch(dir / "sw", sw, v.fingerprint());
    const SwitchMatrix sb = load_switch(dir / "sw", v.fingerprint());
    CHECK(bitwise_equal(sb.W, sw.W));
    CHECK(bitwise_equal(sb.W_dummy, sw.W_dummy));
    CHECK(sb.decode_scale == 0.1);
    CHECK(sb.eps0 == sw.eps0);
    CHECK_THROWS_AS(load_switch(dir / "sw", v.fingerprint() + 1), InputError);

    SearchResult r;
    r.Phi = gaussian_matrix(3, 10, 1.0, rng);
    r.d_s = 2;
    r.d_c = 1;
    r.final_loss = 0.25;
    r.seed = 3;
    save_search_result(dir / "search", r);
    const SearchResult rb = load_search_result(dir / "search");
    CHECK(bitwise_equal(rb.Phi, r.Phi));
    CHECK(rb.final_loss == 0.25);
    CHECK(rb.seed == 3);
    CHECK_FALSE(rb.converged);

    EmbeddingMap map;
    map.H = gaussian_matrix(3, 4, 1.0, rng);
    map.anchor_count = 12;
    map.oracle_gap = 1e-4;
    save_embedding_map(dir / "map", map);
    const EmbeddingMap mb = load_embedding_map(dir / "map");
    CHECK(bitwise_equal(mb.H, map.H));
    CHECK(mb.anchor_count == 12);
    CHECK(mb.oracle_gap == 1e-4);
    fs::remove_all(dir);
}
