#include "fairflow/errors.hpp"
#include "fairflow/fixtures.hpp"
#include "fairflow/generator.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace fairflow;

namespace {

std::vector<TextPair> fixture_pairs(std::size_t n) {
    std::vector<TextPair> out;
    for (auto& p : fixtures::template_pairs(n, 3)) out.push_back({p.source, p.target});
    return out;
}

GeneratorArchitecture tiny() {
    GeneratorArchitecture a;
    a.width = 8;
    a.heads = 2;
    a.encoder_layers = 2;
    a.decoder_layers = 2;
    a.max_length = 16;
    return a;
}

}  // namespace

TEST_CASE("generator tokens split punctuation and keep case") {
    CHECK(generator_tokens("She is a nurse.") == std::vector<std::string>{"She", "is", "a", "nurse", "."});
    CHECK(join_generator_tokens(generator_tokens("  He  fixed it ,ok ")) == "He fixed it , ok");
    const auto v = GeneratorVocabulary::build({{"a b", "b c"}});
    CHECK(v.size() == 6);
    std::size_t oov = 0;
    CHECK(v.encode("a zz c q", &oov) == std::vector<std::size_t>{v.id("a"), GeneratorVocabulary::kUnk, v.id("c"),
                                                                  GeneratorVocabulary::kUnk});
    CHECK(oov == 2);
    CHECK(v.decode({GeneratorVocabulary::kBos, v.id("a"), GeneratorVocabulary::kEos, v.id("b")}) == "a");
}

TEST_CASE("untrained loss is close to the uniform value") {
    const auto pairs = fixture_pairs(200);
    const auto model = make_generator(pairs);
    CHECK(model.vocabulary().size() >= 40);
    CHECK(model.vocabulary().size() <= 60);
    for (std::size_t i = 0; i < 20; ++i) {
        const double len = static_cast<double>(generator_tokens(pairs[i].target).size() + 1);
        const double uniform = len * std::log(static_cast<double>(model.vocabulary().size()));
        const double loss = model.teacher_forcing_loss(pairs[i]);
        CHECK(loss > 0.8 * uniform);
        CHECK(loss < 1.2 * uniform);
    }
}

TEST_CASE("loss is the sum of per-step negative log-probabilities and steps normalise") {
    const auto pairs = fixture_pairs(10);
    const auto model = make_generator(pairs, tiny());
    for (const auto& p : pairs) {
        const auto src = model.vocabulary().encode(p.source);
        const auto tgt = model.vocabulary().encode(p.target);
        const auto steps = model.step_distributions(src, tgt);
        REQUIRE(steps.size() == tgt.size() + 1);
        double sum = 0.0;
        for (std::size_t t = 0; t < steps.size(); ++t) {
            double z = 0.0;
            for (double q : steps[t]) z += q;
            CHECK(std::abs(z - 1.0) < 1e-5);
            const std::size_t gold = t < tgt.size() ? tgt[t] : GeneratorVocabulary::kEos;
            sum -= std::log(steps[t][gold]);
        }
        CHECK(model.teacher_forcing_loss(src, tgt) == doctest::Approx(sum).epsilon(1e-9));
        CHECK(model.teacher_forcing_loss(src, tgt) >= 0.0);

        // The recorded batch loss agrees with the inference path.
        auto copy = model;
        nn::Graph g;
        CHECK(g.value(copy.batch_loss(g, {src}, {tgt}))(0, 0) == doctest::Approx(sum).epsilon(1e-9));
    }
}

TEST_CASE("teacher-forcing gradients match finite differences") {
    const auto pairs = fixture_pairs(3);
    auto model = make_generator(pairs, tiny());
    std::vector<std::vector<std::size_t>> srcs, tgts;
    for (const auto& p : pairs) {
        srcs.push_back(model.vocabulary().encode(p.source));
        tgts.push_back(model.vocabulary().encode(p.target));
    }
    const auto res = testing::check_gradients(model.parameters(),
                                              [&](nn::Graph& g) { return model.batch_loss(g, srcs, tgts); });
    CHECK(res.checked == model.parameter_count());
    CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("training overfits the 200-pair fixture") {
    const auto pairs = fixture_pairs(200);
    GeneratorTrainConfig cfg;
    cfg.epochs = 15;
    const auto model = finetune(make_generator(pairs), pairs, cfg);
    REQUIRE(model.loss_history.size() == 16);
    for (double l : model.loss_history) CHECK(std::isfinite(l));
    double first = 0.0, later = 0.0;
    for (std::size_t i = 0; i < 3; ++i) first += model.loss_history[i];
    for (std::size_t i = 3; i < 6; ++i) later += model.loss_history[i];
    CHECK(later < first);
    CHECK(exact_match(model, pairs) >= 0.9);
    CHECK(model.generate(pairs[0].source) == pairs[0].target);
}

TEST_CASE("training learns the copy task") {
    std::vector<TextPair> pairs;
    for (const auto& p : fixture_pairs(120)) pairs.push_back({p.source, p.source});
    GeneratorArchitecture arch;
    arch.width = 64;
    GeneratorTrainConfig cfg;
    cfg.epochs = 20;
    const auto model = finetune(make_generator(pairs, arch), pairs, cfg);
    CHECK(exact_match(model, pairs) >= 0.95);
}

TEST_CASE("a single pair is memorised") {
    const std::vector<TextPair> pairs = {{"She is a nurse .", "He is a nurse ."}};
    GeneratorArchitecture arch;
    arch.width = 32;
    GeneratorTrainConfig cfg;
    cfg.epochs = 600;
    cfg.learning_rate = 3e-3;
    const auto model = finetune(make_generator(pairs, arch), pairs, cfg);
    CHECK(model.teacher_forcing_loss(pairs[0]) < 0.01);
    CHECK(model.generate("She is a nurse .") == "He is a nurse .");
}

TEST_CASE("decoding terminates and is deterministic") {
    const auto pairs = fixture_pairs(5);
    auto arch = tiny();
    arch.max_length = 7;
    const auto model = make_generator(pairs, arch);
    const auto out = model.generate("");
    CHECK(generator_tokens(out).size() <= 7);
    std::string adversarial;
    for (int i = 0; i < 50; ++i) adversarial += "zz She . ";
    const auto a = model.generate(adversarial);
    CHECK(generator_tokens(a).size() <= 7);
    CHECK(model.generate(adversarial) == a);
}

TEST_CASE("finetune preconditions and checkpoint round trip") {
    const auto pairs = fixture_pairs(4);
    auto model = make_generator(pairs, tiny());
    CHECK_THROWS_AS(finetune(model, {}, {}), PreconditionError);
    std::string long_text;
    for (int i = 0; i < 20; ++i) long_text += "She ";
    CHECK_THROWS_AS(finetune(model, {{long_text, "He"}}, {}), PreconditionError);

    GeneratorTrainConfig cfg;
    cfg.epochs = 2;
    auto trained = finetune(model, {{"She is a qq .", "He is a qq ."}}, cfg);
    CHECK(trained.oov_tally == 2);
    const auto dir = testing::temp_dir("generator");
    trained.save(dir / "g.bin");
    const auto back = Seq2SeqModel::load(dir / "g.bin");
    CHECK(back.serialize() == trained.serialize());
    CHECK(back.loss_history == trained.loss_history);
    CHECK(back.teacher_forcing_loss(pairs[0]) == trained.teacher_forcing_loss(pairs[0]));
    auto bytes = trained.serialize();
    bytes[0] = 'X';
    CHECK_THROWS(Seq2SeqModel::deserialize(bytes));
    CHECK_THROWS(Seq2SeqModel::deserialize(trained.serialize().substr(0, 100)));
}
