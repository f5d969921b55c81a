#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "macnet/checkpoint.hpp"
#include "macnet/corpus.hpp"
#include "macnet/network.hpp"
#include "macnet/train.hpp"
#include "testutil.hpp"

using namespace macnet;

namespace {

struct Fixture {
    testutil::TempDir tmp{"train"};
    LoadedCorpus corpus;
    CategoryAttributeMatrix attr;
    NetworkConfig net_cfg;

    Fixture() {
        CorpusConfig cfg;
        cfg.categories = {default_categories()[1], default_categories()[4],
                          default_categories()[6]};
        cfg.train_per_category = 12;
        cfg.val_per_category = 6;
        cfg.test_per_category = 6;
        cfg.patch_size = 8;
        cfg.seed = 5;
        gen_corpus(cfg, tmp.path() / "corpus");
        corpus = load_corpus(tmp.path() / "corpus");

        attr.k = 3;
        attr.m = 3;
        attr.a = {0.9, 0.1, 0.1, 0.1, 0.9, 0.1, 0.1, 0.1, 0.9};

        net_cfg.patch_size = 8;
        net_cfg.trunk_channels = {4, 8};
        net_cfg.categories = 3;
        net_cfg.attributes = 3;
        net_cfg.classifier_width = 16;
        net_cfg.grid_points = 8;
    }

    TrainConfig train_cfg(int epochs) const {
        TrainConfig t;
        t.batch_size = 6;
        t.max_epochs = epochs;
        t.seed = 11;
        return t;
    }
};

}  // namespace

TEST_CASE("stratified batches hold the per-category quota") {
    std::vector<int> labels;
    for (int i = 0; i < 64; ++i) labels.push_back(i % 8);
    const auto batches = stratified_batches(labels, 8, 16, 99);
    REQUIRE(batches.size() == 4);
    for (const auto& batch : batches) {
        REQUIRE(batch.size() == 16);
        std::vector<int> count(8, 0);
        for (int64_t i : batch) ++count[labels[i]];
        for (int c : count) CHECK(c == 2);
    }
}

TEST_CASE("equal category counts mean every sample appears exactly once per epoch") {
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) labels.push_back(i % 4);
    const auto batches = stratified_batches(labels, 4, 8, 3);
    std::vector<int> seen(40, 0);
    for (const auto& b : batches)
        for (int64_t i : b) ++seen[i];
    for (int s : seen) CHECK(s == 1);
}

TEST_CASE("stratified batches are deterministic in the epoch seed") {
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) labels.push_back(i % 3);
    const auto a = stratified_batches(labels, 3, 6, 42);
    const auto b = stratified_batches(labels, 3, 6, 42);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    const auto c = stratified_batches(labels, 3, 6, 43);
    CHECK(a != c);
}

TEST_CASE("categories short of the quota are rejected") {
    std::vector<int> labels = {0, 0, 0, 1};  // category 1 has one sample
    CHECK_THROWS_AS(stratified_batches(labels, 2, 4, 1), std::invalid_argument);
    CHECK_THROWS_AS(stratified_batches(labels, 2, 3, 1), std::invalid_argument);  // not divisible
}

TEST_CASE("learning rate never decays while validation keeps improving") {
    Fixture f;
    MacNetwork net = MacNetwork::build(f.net_cfg, 1);
    TrainHooks hooks;
    hooks.val_error_override = [](int epoch, double) { return 1.0 / (1.0 + epoch); };
    const auto result = train(net, f.corpus, f.attr, f.train_cfg(5), hooks);
    REQUIRE(result.log.epochs.size() == 5);
    for (const auto& rec : result.log.epochs) CHECK(rec.learning_rate == 0.01);
}

TEST_CASE("worsening at epochs 3 and 5 ends with lr = 1e-4") {
    Fixture f;
    MacNetwork net = MacNetwork::build(f.net_cfg, 1);
    TrainHooks hooks;
    hooks.val_error_override = [](int epoch, double) {
        // strictly improving except at epochs 3 and 5
        const double base = 1.0 - 0.1 * epoch;
        if (epoch == 3 || epoch == 5) return base + 0.5;
        return base;
    };
    const auto result = train(net, f.corpus, f.attr, f.train_cfg(6), hooks);
    REQUIRE(result.log.epochs.size() == 6);
    CHECK(result.log.epochs.back().learning_rate == doctest::Approx(1e-4));
    // the rate recorded for an epoch is the one it trained with
    CHECK(result.log.epochs[0].learning_rate == doctest::Approx(1e-2));
    CHECK(result.log.epochs[3].learning_rate == doctest::Approx(1e-3));
}

TEST_CASE("training stops once the learning rate falls below the floor") {
    Fixture f;
    MacNetwork net = MacNetwork::build(f.net_cfg, 1);
    TrainHooks hooks;
    hooks.val_error_override = [](int epoch, double) { return static_cast<double>(epoch); };
    TrainConfig cfg = f.train_cfg(40);
    cfg.lr_floor = 1e-5;  // three decays: 1e-2 -> 1e-5 < floor? 1e-5 is not < 1e-5; four
    const auto result = train(net, f.corpus, f.attr, cfg, hooks);
    // every epoch after the first worsens: decays at 2,3,4,5 -> lr 1e-6 < 1e-5 stops at epoch 5
    CHECK(result.log.epochs.size() == 5);
    double prev = result.log.epochs.front().learning_rate;
    for (const auto& rec : result.log.epochs) {
        CHECK(rec.learning_rate <= prev);
        if (rec.learning_rate < prev)
            CHECK(prev / rec.learning_rate == doctest::Approx(10.0));
        prev = rec.learning_rate;
    }
}

TEST_CASE("two runs with the same seed produce identical logs") {
    Fixture f;
    MacNetwork n1 = MacNetwork::build(f.net_cfg, 2);
    MacNetwork n2 = MacNetwork::build(f.net_cfg, 2);
    const auto r1 = train(n1, f.corpus, f.attr, f.train_cfg(3));
    const auto r2 = train(n2, f.corpus, f.attr, f.train_cfg(3));
    REQUIRE(r1.log.epochs.size() == r2.log.epochs.size());
    for (size_t i = 0; i < r1.log.epochs.size(); ++i)
        CHECK(r1.log.epochs[i].to_jsonl() == r2.log.epochs[i].to_jsonl());
    auto p1 = n1.parameters();
    auto p2 = n2.parameters();
    for (size_t i = 0; i < p1.size(); ++i)
        for (int64_t j = 0; j < p1[i]->value.size(); ++j)
            REQUIRE(p1[i]->value.values()[j] == p2[i]->value.values()[j]);
}

TEST_CASE("resuming from a checkpoint reproduces the remaining log bitwise") {
    Fixture f;
    const int total_epochs = 5, cut = 2;

    MacNetwork full_net = MacNetwork::build(f.net_cfg, 3);
    const auto full = train(full_net, f.corpus, f.attr, f.train_cfg(total_epochs), {},
                            f.tmp.path() / "full");

    // capture the checkpoint as it stood after epoch `cut`
    MacNetwork head_net = MacNetwork::build(f.net_cfg, 3);
    train(head_net, f.corpus, f.attr, f.train_cfg(cut), {}, f.tmp.path() / "head");

    MacNetwork resumed_net = MacNetwork::build(f.net_cfg, 3);
    const auto tail = train(resumed_net, f.corpus, f.attr, f.train_cfg(total_epochs), {},
                            f.tmp.path() / "tail", f.tmp.path() / "head" / "last.ckpt");

    REQUIRE(tail.log.epochs.size() == static_cast<size_t>(total_epochs - cut));
    for (size_t i = 0; i < tail.log.epochs.size(); ++i)
        CHECK(tail.log.epochs[i].to_jsonl() == full.log.epochs[cut + i].to_jsonl());

    auto pa = full_net.parameters();
    auto pb = resumed_net.parameters();
    for (size_t i = 0; i < pa.size(); ++i)
        for (int64_t j = 0; j < pa[i]->value.size(); ++j)
            REQUIRE(pa[i]->value.values()[j] == pb[i]->value.values()[j]);
}

TEST_CASE("the returned network carries the best validation accuracy seen") {
    Fixture f;
    MacNetwork net = MacNetwork::build(f.net_cfg, 4);
    const auto result = train(net, f.corpus, f.attr, f.train_cfg(4));
    const auto val = evaluate_split(net, f.corpus.val, f.attr, 6);
    CHECK(val.accuracy == doctest::Approx(result.best_val_accuracy));
    for (const auto& rec : result.log.epochs) CHECK(result.best_val_accuracy >= rec.val_accuracy);
}

TEST_CASE("divergence aborts with the offending batch named") {
    Fixture f;
    MacNetwork net = MacNetwork::build(f.net_cfg, 5);
    TrainConfig cfg = f.train_cfg(10);
    cfg.learning_rate = 1e14;  // guaranteed blow-up
    cfg.lr_floor = 1e13;
    try {
        train(net, f.corpus, f.attr, cfg);
        FAIL("expected divergence");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch") != std::string::npos);
        CHECK(msg.find("batch") != std::string::npos);
        CHECK(msg.find("seed 11") != std::string::npos);
    }
}

TEST_CASE("train validates its inputs") {
    Fixture f;
    MacNetwork net = MacNetwork::build(f.net_cfg, 6);
    TrainConfig bad = f.train_cfg(3);
    bad.batch_size = 7;  // not divisible by 3
    CHECK_THROWS_AS(train(net, f.corpus, f.attr, bad), std::invalid_argument);

    CategoryAttributeMatrix wrong;
    wrong.k = 2;
    wrong.m = 3;
    wrong.a.assign(6, 0.5);
    CHECK_THROWS_AS(train(net, f.corpus, wrong, f.train_cfg(3)), std::invalid_argument);

    TrainConfig floor_bad = f.train_cfg(3);
    floor_bad.lr_floor = 1.0;
    CHECK_THROWS_AS(train(net, f.corpus, f.attr, floor_bad), std::invalid_argument);
}

TEST_CASE("epoch records survive the JSONL round trip") {
    EpochRecord r;
    r.epoch = 7;
    r.learning_rate = 1e-3;
    r.train_total = 1.25;
    r.val_accuracy = 0.875;
    r.val_d = -0.5;
    const EpochRecord back = EpochRecord::from_jsonl(r.to_jsonl());
    CHECK(back.epoch == 7);
    CHECK(back.learning_rate == r.learning_rate);
    CHECK(back.val_accuracy == r.val_accuracy);
    CHECK(back.val_d == r.val_d);

    testutil::TempDir tmp("log");
    TrainLog log;
    log.epochs = {r, r};
    save_train_log(tmp.path() / "m.jsonl", log);
    const auto loaded = load_train_log(tmp.path() / "m.jsonl");
    REQUIRE(loaded.epochs.size() == 2);
    CHECK(loaded.epochs[1].epoch == 7);
}

TEST_CASE("drop_category remaps labels densely") {
    Fixture f;
    const auto cut = drop_category(f.corpus, 1);
    CHECK(cut.category_count() == 2);
    CHECK(cut.categories[0].name == f.corpus.categories[0].name);
    CHECK(cut.categories[1].name == f.corpus.categories[2].name);
    CHECK(cut.train.count() == 24);
    for (int label : cut.train.labels) {
        CHECK(label >= 0);
        CHECK(label <= 1);
    }
}
