#include "doctest.h"

#include <map>
#include <random>
#include <set>
#include <thread>

#include "lmswitch/eval.hpp"
#include "lmswitch/interpret.hpp"
#include "lmswitch/linalg.hpp"
#include "support.hpp"

#include <httplib.h>
#include <json.hpp>

using namespace lmswitch;

namespace {

// Serves a fixed handler on 127.0.0.1 for the lifetime of the object.
class LocalServer {
public:
    explicit LocalServer(httplib::Server::Handler handler) {
        server_.Post("/score", std::move(handler));
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LocalServer() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/score"; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

double brute_dist(const std::vector<std::string>& texts, int k) {
    std::vector<std::string> grams;
    for (const auto& t : texts) {
        const auto w = split_words(t);
        for (int i = 0; i + k <= static_cast<int>(w.size()); ++i) {
            std::string g;
            for (int j = 0; j < k; ++j) g += w[static_cast<std::size_t>(i + j)] + '\x1f';
            grams.push_back(g);
        }
    }
    if (grams.empty()) return 0.0;
    std::sort(grams.begin(), grams.end());
    const auto uniq = std::unique(grams.begin(), grams.end()) - grams.begin();
    return static_cast<double>(uniq) / static_cast<double>(grams.size());
}

}  // namespace

TEST_CASE("dist_k examples") {
    CHECK(dist_k({"a a b"}, 1) == doctest::Approx(2.0 / 3.0));
    CHECK(dist_k({"a b", "a b"}, 2) == doctest::Approx(0.5));
    CHECK(dist_k({"x y z", "u v"}, 1) == 1.0);
    CHECK(dist_k({"a"}, 2) == 0.0);
    CHECK(dist_k({}, 1) == 0.0);
    CHECK_THROWS_AS(dist_k({"a"}, 0), InputError);
}

TEST_CASE("dist_k matches brute force on random text") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> word(0, 6), len(0, 8), count(1, 6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::string> texts;
        for (int t = count(rng); t > 0; --t) {
            std::string s;
            for (int i = len(rng); i > 0; --i) s += "w" + std::to_string(word(rng)) + " ";
            texts.push_back(s);
        }
        for (int k = 1; k <= 3; ++k) CHECK(dist_k(texts, k) == brute_dist(texts, k));
    }
}

TEST_CASE("toxicity metrics") {
    const auto m = toxicity_metrics({{0.2, 0.6}, {0.1, 0.3}});
    CHECK(m.avg_max == doctest::Approx(0.45));
    CHECK(m.prob == 0.5);
    const auto z = toxicity_metrics({{0.0}, {0.0, 0.0}});
    CHECK(z.avg_max == 0.0);
    CHECK(z.prob == 0.0);
    CHECK_THROWS_AS(toxicity_metrics({}), InputError);
    CHECK_THROWS_AS(toxicity_metrics({{0.1}, {}}), InputError);

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::vector<double>> scores(1 + trial % 7);
        double sum = 0.0;
        int hits = 0;
        for (auto& row : scores) {
            row.resize(1 + static_cast<std::size_t>(trial % 4));
            double mx = 0.0;
            for (auto& v : row) {
                v = u(rng);
                mx = std::max(mx, v);
            }
            sum += mx;
            hits += mx > 0.5 ? 1 : 0;
        }
        const auto r = toxicity_metrics(scores);
        CHECK(r.avg_max == sum / static_cast<double>(scores.size()));
        CHECK(r.prob == static_cast<double>(hits) / static_cast<double>(scores.size()));
    }
}

TEST_CASE("lexicon scorer") {
    const Scorer s = Scorer::from_lexicon({{"bad", 1.0}, {"meh", 0.5}});
    CHECK(score_text(s, "bad bad good") == doctest::Approx(2.0 / 3.0));
    CHECK(score_text(s, "") == 0.0);
    CHECK(score_text(s, "good bad meh") == score_text(s, "meh good bad"));
    CHECK(score_text(s, "BAD") == 1.0);
    CHECK_THROWS_AS(Scorer::from_lexicon({{"x", 1.5}}), InputError);

    const auto all = score_texts(s, {"bad", "good", "meh meh"});
    CHECK(all == std::vector<double>{1.0, 0.0, 0.5});
}

TEST_CASE("classify_group") {
    const Scorer s = Scorer::from_lexicon({{"bad", 1.0}, {"vile", 1.0}});
    const auto toxic = classify_group(s, {"bad", "vile"}, {"tree", "sky"});
    CHECK(toxic.chose_a);
    CHECK_FALSE(toxic.tie);
    const auto flipped = classify_group(s, {"tree", "sky"}, {"bad", "vile"});
    CHECK_FALSE(flipped.chose_a);
    const auto same = classify_group(s, {"tree"}, {"tree"});
    CHECK(same.tie);
    CHECK(same.chose_a);
    CHECK_THROWS_AS(classify_group(s, {}, {"tree"}), InputError);
}

TEST_CASE("http scorer") {
    LocalServer server([](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        const std::string text = body.at("text");
        if (text == "broken") {
            res.set_content("not json", "application/json");
        } else if (text == "missing") {
            res.set_content(R"({"value": 1})", "application/json");
        } else if (text == "fail") {
            res.status = 500;
        } else {
            res.set_content(text == "hi" ? R"({"score": 0.7})" : R"({"score": 0.1})", "application/json");
        }
    });
    const Scorer s = Scorer::from_endpoint(server.url());
    CHECK(score_text(s, "hi") == 0.7);
    CHECK_THROWS_AS(score_text(s, "broken"), ScorerProtocolError);
    CHECK_THROWS_AS(score_text(s, "missing"), ScorerProtocolError);
    CHECK_THROWS_AS(score_text(s, "fail"), ScorerProtocolError);

    std::vector<std::string> texts;
    std::vector<double> expect;
    for (int i = 0; i < 17; ++i) {
        texts.push_back(i % 3 == 0 ? "hi" : "other");
        expect.push_back(i % 3 == 0 ? 0.7 : 0.1);
    }
    CHECK(score_texts(s, texts) == expect);
}

TEST_CASE("unreachable http scorer") {
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    Scorer s = Scorer::from_endpoint("http://127.0.0.1:" + std::to_string(port) + "/score");
    s.timeout = std::chrono::milliseconds(200);
    CHECK_THROWS_AS(score_text(s, "bad"), ScorerUnavailableError);
    s.lexicon = {{"bad", 1.0}};
    s.lexicon_fallback = true;
    CHECK(score_text(s, "bad") == 1.0);
    CHECK_THROWS_AS(score_text(Scorer::from_endpoint("127.0.0.1/score"), "x"), InputError);
}

TEST_CASE("scorer url resolution") {
    CHECK(resolve_scorer_url(std::string("http://a/b")) == std::optional<std::string>("http://a/b"));
    ::setenv(kScorerUrlEnv, "http://env/score", 1);
    CHECK(resolve_scorer_url(std::nullopt) == std::optional<std::string>("http://env/score"));
    ::unsetenv(kScorerUrlEnv);
    CHECK_FALSE(resolve_scorer_url(std::nullopt).has_value());
}

TEST_CASE("evaluate_generations") {
    const Scorer s = Scorer::from_lexicon({{"bad", 1.0}});
    const auto r = evaluate_generations(s, {{"bad good", "good good"}, {"fine day"}}, 3.5);
    CHECK(r.avg_max_toxicity == doctest::Approx(0.25));
    CHECK(r.toxicity_prob == 0.0);
    CHECK(r.dist1 == doctest::Approx(4.0 / 6.0));
    CHECK(r.dist2 == 1.0);
    CHECK(r.dist3 == 0.0);
    CHECK(r.output_ppl == 3.5);
}

TEST_CASE("svd directions") {
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 3.0;
    d(1, 1) = 1.0;
    const auto s = svd_directions(d);
    CHECK(s.S(0) == doctest::Approx(3.0));
    CHECK(s.S(1) == doctest::Approx(1.0));
    CHECK(std::abs(s.Vt(0, 0)) == doctest::Approx(1.0));
    CHECK(std::abs(s.Vt(1, 1)) == doctest::Approx(1.0));

    std::mt19937_64 rng(1);
    const Matrix u = gaussian_matrix(5, 1, 1.0, rng), v = gaussian_matrix(5, 1, 1.0, rng);
    const auto r1 = svd_directions(u * v.transpose());
    CHECK(r1.S(0) == doctest::Approx(u.norm() * v.norm()));
    CHECK(r1.S.tail(4).maxCoeff() < 1e-12 * r1.S(0));

    for (int trial = 0; trial < 10; ++trial) {
        const Matrix W = gaussian_matrix(8, 8, 1.0, rng);
        const auto f = svd_directions(W);
        CHECK(f.reconstruction_error(W) < 1e-12);
        for (Eigen::Index i = 1; i < f.S.size(); ++i) CHECK(f.S(i) <= f.S(i - 1));
    }
    Matrix bad = Matrix::Identity(3, 3);
    bad(1, 2) = std::nan("");
    CHECK_THROWS_AS(svd_directions(bad), InputError);
}

TEST_CASE("top_influenced_tokens") {
    std::mt19937_64 rng(4);
    const Matrix Q = testsupport::random_orthogonal(6, rng);
    Matrix E(6, 6);
    E.col(0) = Q.col(1);
    E.col(1) = Q.col(2);
    E.col(2) = Q.col(0);
    E.col(3) = Q.col(3);
    E.col(4) = -Q.col(0);
    E.col(5) = Q.col(4);
    const Vector dir = Q.col(0);
    const auto r = top_influenced_tokens(dir, E, 2);
    CHECK(r.top.front() == 2);
    CHECK(r.bottom.front() == 4);
    CHECK(top_influenced_tokens(7.5 * dir, E, 1).top == std::vector<Token>{2});

    const auto full = top_influenced_tokens(dir, E, 6);
    std::set<Token> covered(full.top.begin(), full.top.end());
    covered.insert(full.bottom.begin(), full.bottom.end());
    CHECK(covered.size() == 6);

    // exact ties fall back to id order
    const Matrix flat = Matrix::Ones(2, 5);
    Vector e1 = Vector::Zero(2);
    e1(0) = 1.0;
    CHECK(top_influenced_tokens(e1, flat, 3).top == std::vector<Token>{0, 1, 2});
    CHECK(top_influenced_tokens(e1, flat, 3).bottom == std::vector<Token>{0, 1, 2});

    for (int trial = 0; trial < 10; ++trial) {
        const Matrix R = gaussian_matrix(4, 30, 1.0, rng);
        const Vector d = gaussian_matrix(4, 1, 1.0, rng).col(0);
        const auto a = top_influenced_tokens(d, R, 10);
        const auto b = top_influenced_tokens(0.01 * d, R, 10);
        CHECK(a.top == b.top);
        CHECK(a.bottom == b.bottom);
    }
    CHECK_THROWS_AS(top_influenced_tokens(dir, E, 7), InputError);
}

TEST_CASE("interpret_switch separates a planted direction") {
    std::vector<std::string> toks;
    for (int i = 0; i < 10; ++i) toks.push_back("bad" + std::to_string(i));
    for (int i = 0; i < 30; ++i) toks.push_back("ok" + std::to_string(i));
    toks.insert(toks.end(), {"<unk>", "<bos>", "<eos>"});
    const Vocab v = Vocab::from_tokens(toks);
    std::mt19937_64 rng(8);
    Matrix E = gaussian_matrix(4, static_cast<Eigen::Index>(v.size()), 0.01, rng);
    // toxic tokens sit far along -e0
    for (int i = 0; i < 10; ++i) E(0, i) -= 1.0;
    Matrix W = Matrix::Zero(4, 4);
    W(0, 0) = 5.0;
    W(1, 1) = 0.1;
    const SoftmaxLm lm(v, E, E);
    std::map<std::string, double> lex;
    for (int i = 0; i < 10; ++i) lex["bad" + std::to_string(i)] = 1.0;
    const auto reports = interpret_switch(W, lm, Scorer::from_lexicon(lex), {2, 10, 0.5});
    REQUIRE(reports.size() == 2);
    const auto& lead = reports.front();
    CHECK(lead.singular_value == doctest::Approx(5.0));
    CHECK_FALSE(lead.discarded);
    for (const auto& t : lead.keywords()) CHECK_MESSAGE(lex.count(t) == 1, t << " " << lead.keyword_is_top << " " << lead.top_score << " " << lead.bottom_score);
}
