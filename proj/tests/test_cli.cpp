#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>

#include "cocon/commands.hpp"
#include "cocon/synth.hpp"

#include "test_util.hpp"

using namespace cocon;
using namespace cocon::commands;

namespace {

RunConfig make_config(const ConfigSchema& schema, const std::vector<std::string>& overrides) {
    return RunConfig::load(schema, "", overrides);
}

int run_cli(const std::string& args) {
    std::string cmd = std::string(COCON_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config: defaults, file, and override precedence") {
    ConfigSchema schema{{"alpha", {"1", "first"}}, {"beta", {"x", "second"}}};

    test_util::TempDir tmp("cfg");
    test_util::write_file(tmp.file("c.cfg"), "alpha=2\n");

    RunConfig defaults = RunConfig::load(schema, "", {});
    REQUIRE(defaults.u64("alpha") == 1);

    RunConfig from_file = RunConfig::load(schema, tmp.file("c.cfg"), {});
    REQUIRE(from_file.u64("alpha") == 2);
    REQUIRE(from_file.str("beta") == "x");

    RunConfig overridden = RunConfig::load(schema, tmp.file("c.cfg"), {"alpha=3"});
    REQUIRE(overridden.u64("alpha") == 3);

    SECTION("unknown keys are hard errors") {
        test_util::write_file(tmp.file("bad.cfg"), "gamma=1\n");
        REQUIRE_THROWS_AS(RunConfig::load(schema, tmp.file("bad.cfg"), {}), ConfigError);
        REQUIRE_THROWS_AS(RunConfig::load(schema, "", {"gamma=1"}), ConfigError);
        REQUIRE_THROWS_AS(RunConfig::load(schema, "", {"notkv"}), ConfigError);
    }

    SECTION("typed accessors validate") {
        RunConfig rc = RunConfig::load(schema, "", {"alpha=notanint"});
        REQUIRE_THROWS_AS(rc.u64("alpha"), ConfigError);
        REQUIRE_THROWS_AS(rc.f64("alpha"), ConfigError);
        REQUIRE_THROWS_AS(rc.flag("alpha"), ConfigError);
        REQUIRE_THROWS_AS(rc.str("gamma"), ConfigError);
    }

    SECTION("echo is sorted and byte stable") {
        overridden.echo(tmp.file("echo1"));
        overridden.echo(tmp.file("echo2"));
        REQUIRE(test_util::read_file(tmp.file("echo1")) ==
                test_util::read_file(tmp.file("echo2")));
        REQUIRE(test_util::read_file(tmp.file("echo1")) == "alpha=3\nbeta=x\n");
    }
}

TEST_CASE("synthetic corpus construction properties") {
    SynthConfig cfg;
    cfg.n_topics = 6;
    cfg.docs_per_topic = 8;
    cfg.n_queries = 18;
    cfg.seed = 11;
    SyntheticData data = make_synthetic_corpus(cfg);

    REQUIRE(data.corpus.size() == 48);
    REQUIRE(data.heldout.size() == 12);
    REQUIRE(data.queries.size() == 18);

    SECTION("every query has at least one relevant document") {
        for (const Query& q : data.queries) {
            REQUIRE(data.qrels.count(q.qid));
            REQUIRE(!data.qrels.at(q.qid).empty());
            // relevant documents belong to a single topic: the query's own
            size_t topic = std::stoul(q.qid.substr(1)) % cfg.n_topics;
            for (const auto& pid : data.qrels.at(q.qid)) {
                size_t doc_idx = std::stoul(pid.substr(1));
                REQUIRE(doc_idx / cfg.docs_per_topic == topic);
            }
        }
    }

    SECTION("topic keyword sets are pairwise disjoint") {
        for (size_t a = 0; a < cfg.n_topics; ++a) {
            for (size_t b = a + 1; b < cfg.n_topics; ++b) {
                for (const auto& w : data.topic_keywords[a]) {
                    REQUIRE(data.topic_keywords[b].count(w) == 0);
                }
            }
        }
    }

    SECTION("relevant documents contain every query keyword") {
        std::map<std::string, const Document*> by_id;
        for (const Document& d : data.corpus) by_id[d.id] = &d;
        for (const Query& q : data.queries) {
            auto kws = word_tokenize(q.text);
            for (const auto& pid : data.qrels.at(q.qid)) {
                auto words = word_tokenize(by_id.at(pid)->text);
                std::set<std::string> have(words.begin(), words.end());
                for (const auto& k : kws) REQUIRE(have.count(k) == 1);
            }
        }
    }

    SECTION("generation is deterministic in the seed") {
        SyntheticData again = make_synthetic_corpus(cfg);
        REQUIRE(again.corpus.size() == data.corpus.size());
        for (size_t i = 0; i < data.corpus.size(); ++i) {
            REQUIRE(again.corpus[i].id == data.corpus[i].id);
            REQUIRE(again.corpus[i].text == data.corpus[i].text);
        }
        SynthConfig other = cfg;
        other.seed = 12;
        SyntheticData different = make_synthetic_corpus(other);
        REQUIRE(different.corpus[0].text != data.corpus[0].text);
    }

    SECTION("BM25 baseline beats random recall by a wide margin") {
        BM25Index bm25 = BM25Index::build(data.corpus);
        std::vector<RankedList> run;
        for (const Query& q : data.queries) run.push_back(bm25.topk(q.text, 5, q.qid));
        double r5 = recall_at_k(run, data.qrels, 5);
        double random_baseline = 5.0 / double(data.corpus.size());
        REQUIRE(r5 > random_baseline);
        REQUIRE(r5 >= 0.5);  // lexical retrieval is strong on keyword corpora
    }
}

TEST_CASE("queries, qrels, runs, and triples round trip with line errors") {
    test_util::TempDir tmp("files");

    SECTION("queries") {
        std::vector<Query> qs{{"q1", "red wolf"}, {"q2", "blue sea"}};
        save_queries(qs, tmp.file("q.tsv"));
        auto loaded = load_queries(tmp.file("q.tsv"));
        REQUIRE(loaded.size() == 2);
        REQUIRE(loaded[1].text == "blue sea");

        test_util::write_file(tmp.file("bad.tsv"), "q1 red wolf\n");
        REQUIRE_THROWS_WITH(load_queries(tmp.file("bad.tsv")),
                            Catch::Matchers::ContainsSubstring("bad.tsv:1"));
    }

    SECTION("qrels") {
        Qrels qr{{"q1", {"p1", "p2"}}, {"q2", {"p3"}}};
        save_qrels(qr, tmp.file("qr.tsv"));
        REQUIRE(load_qrels(tmp.file("qr.tsv")) == qr);

        test_util::write_file(tmp.file("bad.tsv"), "q1\tp1\nq2\n");
        REQUIRE_THROWS_WITH(load_qrels(tmp.file("bad.tsv")),
                            Catch::Matchers::ContainsSubstring("bad.tsv:2"));
    }

    SECTION("runs") {
        std::vector<RankedList> run{{"q1", {{"p2", 1.5}, {"p1", 0.25}}},
                                    {"q2", {{"p9", -3.0625}}}};
        save_run(run, tmp.file("r.trec"), "tagx");
        auto loaded = load_run(tmp.file("r.trec"));
        REQUIRE(loaded.size() == 2);
        REQUIRE(loaded[0].hits[0].pid == "p2");
        REQUIRE(loaded[0].hits[0].score == 1.5);
        REQUIRE(loaded[1].hits[0].score == -3.0625);

        std::string text = test_util::read_file(tmp.file("r.trec"));
        REQUIRE(text.find("q1 Q0 p2 1 1.5 tagx") == 0);

        test_util::write_file(tmp.file("bad.trec"), "q1 ZZ p2 1 1.5 tag\n");
        REQUIRE_THROWS_WITH(load_run(tmp.file("bad.trec")),
                            Catch::Matchers::ContainsSubstring("bad.trec:1"));
    }

    SECTION("triples") {
        std::vector<TrainingTriple> ts{{"q1", "p1", {"p2", "p3"}}};
        save_triples(ts, tmp.file("t.jsonl"));
        auto loaded = load_triples(tmp.file("t.jsonl"));
        REQUIRE(loaded.size() == 1);
        REQUIRE(loaded[0].negs == std::vector<std::string>{"p2", "p3"});

        test_util::write_file(tmp.file("bad.jsonl"),
                              "{\"qid\":\"q1\",\"pos\":\"p1\",\"negs\":[\"p1\"]}\n");
        REQUIRE_THROWS_WITH(load_triples(tmp.file("bad.jsonl")),
                            Catch::Matchers::ContainsSubstring("negative"));
        test_util::write_file(tmp.file("bad2.jsonl"), "{not json\n");
        REQUIRE_THROWS_WITH(load_triples(tmp.file("bad2.jsonl")),
                            Catch::Matchers::ContainsSubstring("bad2.jsonl:1"));
    }
}

TEST_CASE("cli binary: help, usage errors, and exit codes") {
    REQUIRE(run_cli("--help") == 0);
    REQUIRE(run_cli("synth --help") == 0);
    REQUIRE(run_cli("pretrain1 --help") == 0);

    REQUIRE(run_cli("") == kUsage);
    REQUIRE(run_cli("nosuchcommand") == kUsage);
    REQUIRE(run_cli("synth -s nonsense_key=1 -o /tmp/cli_usage") == kUsage);

    // missing inputs are data errors
    REQUIRE(run_cli("pretrain1 -o /tmp/cli_usage -s corpus=/nonexistent.jsonl") == kDataError);
    REQUIRE(run_cli("eval -o /tmp/cli_usage -s run=/missing qrels=/missing") == kDataError);
}

TEST_CASE("output root: flag beats environment beats default") {
    REQUIRE(output_root("explicit/dir") == "explicit/dir");
    setenv("COCONDENSER_OUT", "/tmp/envroot", 1);
    REQUIRE(output_root("") == "/tmp/envroot");
    REQUIRE(output_root("flag") == "flag");
    unsetenv("COCONDENSER_OUT");
    REQUIRE(output_root("") == "runs");
}

TEST_CASE("gradcheck command exit codes through the binary") {
    test_util::TempDir tmp("gc");
    REQUIRE(run_cli("gradcheck -o " + tmp.path()) == 0);
    REQUIRE(run_cli("gradcheck -o " + tmp.path() + " -s inject_broken_gradient=true") ==
            kCheckFailure);
}

TEST_CASE("finetune command emits both rounds' artifacts") {
    test_util::TempDir tmp("ftcmd");

    SynthConfig scfg;
    scfg.n_topics = 3;
    scfg.docs_per_topic = 5;
    scfg.n_queries = 6;
    scfg.seed = 44;
    SyntheticData data = make_synthetic_corpus(scfg);
    save_corpus(data.corpus, tmp.file("corpus.jsonl"));
    save_queries(data.queries, tmp.file("queries.tsv"));
    save_qrels(data.qrels, tmp.file("qrels.tsv"));

    std::vector<std::string> texts;
    for (const auto& d : data.corpus) texts.push_back(d.text);
    Vocabulary vocab = Vocabulary::build(texts, 500);
    vocab.save(tmp.file("vocab.txt"));
    EncoderConfig ecfg;
    ecfg.hidden = 16;
    ecfg.heads = 2;
    ecfg.ff = 24;
    ecfg.max_len = 32;
    ecfg.vocab_size = vocab.size();
    RngStream rng(8);
    Encoder backbone = Encoder::make(ecfg, 1, rng);
    save_encoder(backbone, tmp.file("bb.ckpt"), tmp.file("bb.meta"));

    RunConfig rc = make_config(
        finetune_schema(),
        {"corpus=" + tmp.file("corpus.jsonl"), "queries=" + tmp.file("queries.tsv"),
         "qrels=" + tmp.file("qrels.tsv"), "backbone=" + tmp.file("bb.ckpt"),
         "vocab=" + tmp.file("vocab.txt"), "epochs=1", "batch=4", "run_depth=15"});
    REQUIRE(cmd_finetune(rc, tmp.path()) == kOk);

    // exactly two run files and two metric reports, plus triples and model
    for (const char* f : {"round1.run", "round2.run", "round1.metrics", "round2.metrics",
                          "triples_round1.jsonl", "triples_round2.jsonl", "biencoder.ckpt",
                          "biencoder.meta", "config.echo", "finetune.log"}) {
        INFO(f);
        REQUIRE(std::filesystem::exists(tmp.path() + "/finetune/" + std::string(f)));
    }
    auto run1 = load_run(tmp.path() + "/finetune/round1.run");
    auto run2 = load_run(tmp.path() + "/finetune/round2.run");
    REQUIRE(run1.size() == data.queries.size());
    REQUIRE(run2.size() == data.queries.size());

    auto r2 = load_triples(tmp.path() + "/finetune/triples_round2.jsonl");
    auto r1 = load_triples(tmp.path() + "/finetune/triples_round1.jsonl");
    REQUIRE(r1.size() == r2.size());
    for (size_t i = 0; i < r1.size(); ++i) {
        REQUIRE(r2[i].negs.size() >= r1[i].negs.size());
    }
}

TEST_CASE("pretrain2 without a stage-1 checkpoint gives an actionable error") {
    test_util::TempDir tmp("noinit");
    SynthConfig scfg;
    scfg.n_topics = 2;
    scfg.docs_per_topic = 3;
    scfg.n_queries = 2;
    SyntheticData data = make_synthetic_corpus(scfg);
    save_corpus(data.corpus, tmp.file("corpus.jsonl"));

    RunConfig rc = make_config(pretrain2_schema(),
                               {"corpus=" + tmp.file("corpus.jsonl"), "steps=1"});
    try {
        cmd_pretrain2(rc, tmp.path());
        FAIL("expected a DataError");
    } catch (const DataError& e) {
        REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("pretrain1"));
    }
}

TEST_CASE("identical seeded commands produce byte-identical artifacts") {
    test_util::TempDir tmp("idem");

    auto run_synth = [&](const std::string& name) {
        RunConfig rc = make_config(synth_schema(),
                                   {"topics=3", "docs_per_topic=4", "queries=6", "seed=9",
                                    "out=" + name});
        REQUIRE(cmd_synth(rc, tmp.path()) == kOk);
        return tmp.path() + "/" + name;
    };
    std::string a = run_synth("a");
    std::string b = run_synth("b");
    for (const char* f : {"corpus.jsonl", "heldout.jsonl", "queries.tsv", "qrels.tsv"}) {
        REQUIRE(test_util::read_file(a + "/" + f) == test_util::read_file(b + "/" + f));
    }

    auto run_p1 = [&](const std::string& name) {
        RunConfig rc = make_config(
            pretrain1_schema(),
            {"corpus=" + a + "/corpus.jsonl", "steps=8", "hidden=16", "heads=2", "ff=24",
             "n_early=1", "n_late=1", "n_head=1", "max_len=24", "docs_per_update=3",
             "span_min=5", "span_max=12", "seed=4", "out=" + name});
        REQUIRE(cmd_pretrain1(rc, tmp.path()) == kOk);
        return tmp.path() + "/" + name;
    };
    std::string p1 = run_p1("p1a");
    std::string p2 = run_p1("p1b");
    // primary outputs: identical inputs + seed give identical bytes
    // (config.echo differs by the out key itself)
    for (const char* f : {"stage1.ckpt", "stage1.meta", "vocab.txt", "train.log"}) {
        INFO(f);
        REQUIRE(test_util::read_file(p1 + "/" + f) == test_util::read_file(p2 + "/" + f));
    }
    // rerunning into the same directory reproduces everything, echo included
    std::string echo_before = test_util::read_file(p1 + "/config.echo");
    std::string ckpt_before = test_util::read_file(p1 + "/stage1.ckpt");
    run_p1("p1a");
    REQUIRE(test_util::read_file(p1 + "/config.echo") == echo_before);
    REQUIRE(test_util::read_file(p1 + "/stage1.ckpt") == ckpt_before);
}

TEST_CASE("eval command reproduces the hand-computed fixture table") {
    test_util::TempDir tmp("evalfix");

    std::vector<RankedList> run;
    run.push_back({"q1", {{"p9", 5}, {"p1", 4}, {"p3", 3}}});
    run.push_back({"q2", {{"p2", 9}, {"p7", 8}, {"p4", 7}, {"p8", 6}}});
    run.push_back({"q3", {{"p8", 3}, {"p7", 2}, {"p5", 1}}});
    run.push_back({"q4", {{"p1", 2}, {"p2", 1}}});
    run.push_back({"q5", {{"p1", 1}}});
    save_run(run, tmp.file("fix.trec"), "fixture");

    Qrels qrels{{"q1", {"p1"}}, {"q2", {"p2", "p4"}}, {"q3", {"p5"}}, {"q4", {"p6"}}};
    save_qrels(qrels, tmp.file("fix.qrels"));

    RunConfig rc = make_config(eval_schema(), {"run=" + tmp.file("fix.trec"),
                                               "qrels=" + tmp.file("fix.qrels")});
    REQUIRE(cmd_eval(rc, tmp.path()) == kOk);

    std::ifstream is(tmp.path() + "/eval/metrics.txt");
    std::map<std::string, double> vals;
    std::string name;
    double v;
    while (is >> name >> v) vals[name] = v;
    REQUIRE(vals.at("MRR@10") == Catch::Approx(11.0 / 24.0).epsilon(1e-15));
    REQUIRE(vals.at("R@5") == Catch::Approx(0.75).epsilon(1e-15));
    REQUIRE(vals.at("evaluated") == 4);
    REQUIRE(vals.at("skipped") == 1);
}

TEST_CASE("index and search commands round trip through disk") {
    test_util::TempDir tmp("idxsearch");

    SynthConfig scfg;
    scfg.n_topics = 3;
    scfg.docs_per_topic = 4;
    scfg.n_queries = 6;
    scfg.seed = 21;
    SyntheticData data = make_synthetic_corpus(scfg);
    save_corpus(data.corpus, tmp.file("corpus.jsonl"));
    save_queries(data.queries, tmp.file("queries.tsv"));

    // tiny backbone saved as the encoder
    std::vector<std::string> texts;
    for (const auto& d : data.corpus) texts.push_back(d.text);
    Vocabulary vocab = Vocabulary::build(texts, 500);
    vocab.save(tmp.file("vocab.txt"));
    EncoderConfig ecfg;
    ecfg.hidden = 16;
    ecfg.heads = 2;
    ecfg.ff = 24;
    ecfg.max_len = 32;
    ecfg.vocab_size = vocab.size();
    RngStream rng(3);
    Encoder enc = Encoder::make(ecfg, 2, rng);
    save_encoder(enc, tmp.file("enc.ckpt"), tmp.file("enc.meta"));

    RunConfig rc_index = make_config(index_schema(), {"corpus=" + tmp.file("corpus.jsonl"),
                                                      "encoder=" + tmp.file("enc.ckpt"),
                                                      "vocab=" + tmp.file("vocab.txt")});
    REQUIRE(cmd_index(rc_index, tmp.path()) == kOk);

    RunConfig rc_search = make_config(
        search_schema(),
        {"index=" + tmp.path() + "/index/index.bin", "queries=" + tmp.file("queries.tsv"),
         "encoder=" + tmp.file("enc.ckpt"), "vocab=" + tmp.file("vocab.txt"), "k=500"});
    REQUIRE(cmd_search(rc_search, tmp.path()) == kOk);

    auto run = load_run(tmp.path() + "/search/run.trec");
    REQUIRE(run.size() == data.queries.size());
    // k clamped to the collection
    REQUIRE(run[0].hits.size() == data.corpus.size());

    // search results agree with an in-memory index of the same encoder
    RetrievalIndex mem = build_index(enc, data.corpus, vocab);
    RankedList expect = search(mem, encode_query(enc, vocab, data.queries[0].text),
                               data.corpus.size(), data.queries[0].qid);
    for (size_t r = 0; r < expect.hits.size(); ++r) {
        REQUIRE(run[0].hits[r].pid == expect.hits[r].pid);
    }
}

TEST_CASE("mine command appends hard negatives through files") {
    test_util::TempDir tmp("minefiles");

    SynthConfig scfg;
    scfg.n_topics = 3;
    scfg.docs_per_topic = 5;
    scfg.n_queries = 6;
    scfg.seed = 33;
    SyntheticData data = make_synthetic_corpus(scfg);
    save_corpus(data.corpus, tmp.file("corpus.jsonl"));
    save_queries(data.queries, tmp.file("queries.tsv"));
    save_qrels(data.qrels, tmp.file("qrels.tsv"));

    std::vector<std::string> texts;
    for (const auto& d : data.corpus) texts.push_back(d.text);
    Vocabulary vocab = Vocabulary::build(texts, 500);
    vocab.save(tmp.file("vocab.txt"));
    EncoderConfig ecfg;
    ecfg.hidden = 16;
    ecfg.heads = 2;
    ecfg.ff = 24;
    ecfg.max_len = 32;
    ecfg.vocab_size = vocab.size();
    RngStream rng(5);
    Encoder backbone = Encoder::make(ecfg, 1, rng);
    BiEncoder bi = BiEncoder::from_backbone(backbone);
    save_biencoder(bi, tmp.file("bi.ckpt"), tmp.file("bi.meta"));

    std::vector<TrainingTriple> triples;
    for (const Query& q : data.queries) {
        triples.push_back({q.qid, *data.qrels.at(q.qid).begin(), {"d000"}});
        if (triples.back().pos == "d000") triples.back().negs = {"d001"};
    }
    save_triples(triples, tmp.file("triples.jsonl"));

    RunConfig rc = make_config(
        mine_schema(),
        {"corpus=" + tmp.file("corpus.jsonl"), "queries=" + tmp.file("queries.tsv"),
         "qrels=" + tmp.file("qrels.tsv"), "triples=" + tmp.file("triples.jsonl"),
         "biencoder=" + tmp.file("bi.ckpt"), "vocab=" + tmp.file("vocab.txt"),
         "depth=15", "per_query=4"});
    REQUIRE(cmd_mine(rc, tmp.path()) == kOk);

    auto augmented = load_triples(tmp.path() + "/mine/triples.jsonl");
    REQUIRE(augmented.size() == triples.size());
    for (size_t i = 0; i < augmented.size(); ++i) {
        REQUIRE(augmented[i].negs.size() > triples[i].negs.size());
        REQUIRE(augmented[i].negs[0] == triples[i].negs[0]);
        for (const auto& n : augmented[i].negs) {
            REQUIRE(data.qrels.at(augmented[i].qid).count(n) == 0);
        }
    }
}
