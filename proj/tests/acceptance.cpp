// Acceptance harness: one pass/fail line per criterion, nonzero exit when
// anything fails. Criteria:
//
//   gradcache-equivalence   cached gradients == naive full-batch, rel 1e-8
//   autodiff-soundness      finite differences on every op and the full loss
//   contrastive-oracle      batch loss == literal double-loop, 1e-12
//   condenser-short-circuit head blind to late token rows, sensitive to CLS
//   exact-search-oracle     top-k == argsort prefix with tie order
//   metrics-oracle          hand-computed 5-query fixture, exact
//   e2e-desk-experiment     synthetic corpus, both pre-training stages and
//                           two-round fine-tuning, seed-averaged thresholds
//   determinism             identical command + seed => identical bytes
//
// Run a subset with: acceptance [criterion-name ...]

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cocon/checksuites.hpp"
#include "cocon/commands.hpp"
#include "cocon/synth.hpp"

using namespace cocon;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

std::string scratch_root() {
    static std::string root = [] {
        std::string dir = (fs::temp_directory_path() /
                           ("cocon_acceptance_" + std::to_string(::getpid()))).string();
        fs::create_directories(dir);
        return dir;
    }();
    return root;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

// ---------------------------------------------------------------------------

Criterion check_gradcache_equivalence_criterion() {
    Criterion c{"gradcache-equivalence"};
    CheckResult r = check_gradcache_equivalence();
    c.pass = r.pass;
    std::ostringstream os;
    os << "max rel err " << r.max_err << " vs " << r.tolerance;
    c.detail = os.str();
    return c;
}

Criterion check_autodiff_soundness() {
    Criterion c{"autodiff-soundness"};
    std::vector<CheckResult> results{check_tensor_ops(), check_encoder_stack(),
                                     check_condenser_mlm(), check_combined_loss(),
                                     check_cache_vectors()};
    c.pass = true;
    std::ostringstream os;
    for (const CheckResult& r : results) {
        c.pass &= r.pass;
        os << r.suite << " " << r.max_err << (r.pass ? " ok; " : " FAIL; ");
    }
    c.detail = os.str();
    return c;
}

Criterion check_contrastive_oracle() {
    Criterion c{"contrastive-oracle"};
    c.pass = true;
    std::ostringstream os;

    double worst = 0.0;
    RngStream rng(20260810);
    for (size_t n : {2ul, 3ul, 5ul, 8ul}) {
        Tensor H = Tensor::randn({2 * n, 12}, rng, 0.8);
        ContrastiveLoss co = contrastive_loss(H);
        // literal double loop over Eq-style inner products
        for (size_t ij = 0; ij < 2 * n; ++ij) {
            double mate = 0.0;
            for (size_t d = 0; d < 12; ++d) mate += H.at(ij, d) * H.at(ij ^ 1, d);
            double denom = 0.0;
            for (size_t kl = 0; kl < 2 * n; ++kl) {
                if (kl == ij) continue;
                double ip = 0.0;
                for (size_t d = 0; d < 12; ++d) ip += H.at(ij, d) * H.at(kl, d);
                denom += std::exp(ip);
            }
            worst = std::max(worst, std::abs(co.per_span.at(ij) +
                                             std::log(std::exp(mate) / denom)));
        }
    }
    c.pass &= worst < 1e-12;
    os << "double-loop diff " << worst;

    // degenerate cases hold exactly
    RngStream rng2(7);
    Tensor pair = Tensor::randn({2, 6}, rng2, 2.0);
    ContrastiveLoss lone = contrastive_loss(pair);
    bool n1_zero = lone.per_span.at(0) == 0.0 && lone.per_span.at(1) == 0.0;
    c.pass &= n1_zero;

    Tensor same = Tensor::from_data({4, 3}, {1, 2, 0.5, 1, 2, 0.5, 1, 2, 0.5, 1, 2, 0.5});
    ContrastiveLoss all_same = contrastive_loss(same);
    double ident_diff = 0.0;
    for (size_t i = 0; i < 4; ++i) {
        ident_diff = std::max(ident_diff, std::abs(all_same.per_span.at(i) - std::log(3.0)));
    }
    c.pass &= ident_diff <= 1e-12;
    os << "; n=1 zero " << (n1_zero ? "ok" : "FAIL") << "; identical ln3 diff " << ident_diff;
    c.detail = os.str();
    return c;
}

Criterion check_short_circuit() {
    Criterion c{"condenser-short-circuit"};
    Vocabulary vocab = detail::check_vocab();
    RngStream rng(31);
    CondenserModel model = CondenserModel::make(detail::check_model_config(16), rng);
    TokenSequence seq = sequence_from_ids({5, 6, 7, 8, 9, 10, 11, 12}, 12);

    ForwardTrace base = forward_backbone(seq, model);
    forward_head(base, model, seq.attention_mask);

    // perturb every late token row: h_cd must be bitwise identical
    ForwardTrace poked = forward_backbone(seq, model);
    size_t L = poked.late_full.rows(), d = poked.late_full.cols();
    std::vector<double> vals = poked.late_full.data();
    for (size_t i = 1; i < L; ++i)
        for (size_t j = 0; j < d; ++j) vals[i * d + j] += 3.0 + double(i * d + j);
    poked.late_full = Tensor::from_data({L, d}, std::move(vals));
    forward_head(poked, model, seq.attention_mask);
    bool blind = poked.head_full.data() == base.head_full.data();

    // perturb the late CLS: h_cd must move
    ForwardTrace cls_poked = forward_backbone(seq, model);
    std::vector<double> cvals = cls_poked.late_full.data();
    for (size_t j = 0; j < d; ++j) cvals[j] += 0.25;
    cls_poked.late_full = Tensor::from_data({L, d}, std::move(cvals));
    forward_head(cls_poked, model, seq.attention_mask);
    double moved = 0.0;
    for (size_t i = 0; i < cls_poked.head_full.numel(); ++i) {
        moved = std::max(moved, std::abs(cls_poked.head_full.data()[i] -
                                         base.head_full.data()[i]));
    }

    c.pass = blind && moved > 1e-12;
    std::ostringstream os;
    os << "late-token blindness " << (blind ? "bitwise" : "VIOLATED") << ", CLS sensitivity "
       << moved;
    c.detail = os.str();
    return c;
}

Criterion check_exact_search() {
    Criterion c{"exact-search-oracle"};
    RngStream rng(55);
    size_t n = 200, d = 16;
    RetrievalIndex index;
    index.dim = d;
    index.matrix.resize(n * d);
    for (auto& v : index.matrix) v = rng.normal();
    for (size_t i = 0; i < n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "p%03zu", i);
        index.pids.push_back(buf);
    }
    // exact ties via duplicated rows
    for (size_t i = 0; i < 12; ++i) {
        std::copy_n(index.row(i), d, index.matrix.begin() + (i + 120) * d);
    }

    c.pass = true;
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> q(d);
        for (auto& v : q) v = rng.normal();
        std::vector<std::pair<double, std::string>> oracle;
        for (size_t i = 0; i < n; ++i) {
            oracle.emplace_back(similarity(q, {index.row(i), index.row(i) + d}),
                                index.pids[i]);
        }
        std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (size_t k : {1ul, 5ul, 100ul}) {
            RankedList got = search(index, q, k);
            for (size_t r = 0; r < k; ++r) {
                c.pass &= got.hits[r].pid == oracle[r].second &&
                          got.hits[r].score == oracle[r].first;
            }
        }
    }
    c.detail = "200x16, k in {1,5,100}, duplicated-row ties, 20 queries";
    return c;
}

Criterion check_metrics_oracle() {
    Criterion c{"metrics-oracle"};
    Qrels qrels{{"q1", {"p1"}}, {"q2", {"p2", "p4"}}, {"q3", {"p5"}}, {"q4", {"p6"}}};
    std::vector<RankedList> run;
    run.push_back({"q1", {{"p9", 5}, {"p1", 4}, {"p3", 3}}});
    run.push_back({"q2", {{"p2", 9}, {"p7", 8}, {"p4", 7}, {"p8", 6}}});
    run.push_back({"q3", {{"p8", 3}, {"p7", 2}, {"p5", 1}}});
    run.push_back({"q4", {{"p1", 2}, {"p2", 1}}});
    run.push_back({"q5", {{"p1", 1}}});

    MetricReport rep = evaluate_run(run, qrels);
    bool ok = rep.mrr10 == 11.0 / 24.0 && rep.r5 == 0.75 && rep.r20 == 0.75 &&
              rep.r100 == 0.75 && rep.r1000 == 0.75 && rep.evaluated == 4 && rep.skipped == 1 &&
              mrr_at_k(run, qrels, 2) == 3.0 / 8.0 && recall_at_k(run, qrels, 2) == 3.0 / 8.0;
    c.pass = ok;
    c.detail = ok ? "hand-computed table matches exactly" : "table mismatch";
    return c;
}

// ---------------------------------------------------------------------------
// end-to-end desk experiment
// ---------------------------------------------------------------------------

struct SeedOutcome {
    double gap = 0.0;             // final alignment gap on held-out docs
    double pretrained_r5 = 0.0;   // round-2 recall@5, pre-trained backbone
    double baseline_r5 = 0.0;     // round-2 recall@5, random-init backbone
    double round1_r5 = 0.0;       // pre-trained round-1 recall@5
};

SeedOutcome run_desk_seed(uint64_t seed) {
    std::string root = scratch_root() + "/e2e_seed" + std::to_string(seed);
    fs::create_directories(root);

    auto set = [](std::initializer_list<std::string> kv) {
        return std::vector<std::string>(kv);
    };
    std::string seed_s = std::to_string(seed);

    // corpus: the criterion's 20 topics x 10 docs, 40 queries
    RunConfig synth_rc = RunConfig::load(commands::synth_schema(), "",
        set({"topics=20", "docs_per_topic=10", "queries=40", "seed=" + seed_s}));
    if (commands::cmd_synth(synth_rc, root) != 0) throw std::runtime_error("synth failed");
    std::string synth = root + "/synth";

    // stage 1: universal MLM pre-training from random init
    RunConfig p1_rc = RunConfig::load(commands::pretrain1_schema(), "",
        set({"corpus=" + synth + "/corpus.jsonl", "steps=2000", "hidden=32", "heads=4",
             "ff=128", "n_early=2", "n_late=2", "n_head=2", "max_len=32",
             "docs_per_update=8", "span_min=8", "span_max=24", "lr=1e-3",
             "seed=" + seed_s}));
    if (commands::cmd_pretrain1(p1_rc, root) != 0) throw std::runtime_error("pretrain1 failed");

    // stage 2: corpus-aware contrastive pre-training through the cache
    RunConfig p2_rc = RunConfig::load(commands::pretrain2_schema(), "",
        set({"corpus=" + synth + "/corpus.jsonl", "heldout=" + synth + "/heldout.jsonl",
             "init=" + root + "/stage1/stage1.ckpt", "vocab=" + root + "/stage1/vocab.txt",
             "steps=2000", "docs_per_update=8", "sub_batch=4", "span_min=8", "span_max=24",
             "lr=5e-4", "probe_every=500", "seed=" + seed_s}));
    if (commands::cmd_pretrain2(p2_rc, root) != 0) throw std::runtime_error("pretrain2 failed");

    SeedOutcome outcome;
    {
        // final line of the probe log carries the last alignment gap
        std::ifstream probe(root + "/stage2/probe.log");
        std::string line, last;
        while (std::getline(probe, line)) {
            if (!line.empty()) last = line;
        }
        std::istringstream fields(last);
        size_t step;
        fields >> step >> outcome.gap;
    }

    // shared fine-tuning setup
    Vocabulary vocab = Vocabulary::load(root + "/stage1/vocab.txt");
    std::vector<Document> docs = load_corpus(synth + "/corpus.jsonl");
    std::vector<Query> queries = load_queries(synth + "/queries.tsv");
    Qrels qrels = load_qrels(synth + "/qrels.tsv");

    PipelineConfig pcfg;
    pcfg.finetune.batch = 8;
    pcfg.finetune.epochs = 3;
    pcfg.finetune.lr = 3e-4;
    pcfg.finetune.negs_per_step = 4;
    pcfg.finetune.seed = seed;
    pcfg.bm25_negs_per_query = 8;
    pcfg.bm25_depth = 30;
    pcfg.mining.depth = 30;
    pcfg.mining.per_query = 8;
    pcfg.run_depth = 200;

    Encoder pretrained = commands::load_encoder(root + "/stage2/backbone.ckpt",
                                                root + "/stage2/backbone.meta");
    PipelineResult tuned = two_round_pipeline(docs, queries, qrels, pretrained, vocab, pcfg);
    outcome.pretrained_r5 = tuned.round2_art.metrics.r5;
    outcome.round1_r5 = tuned.round1_art.metrics.r5;

    // otherwise-identical backbone without any pre-training
    RngStream baseline_rng(mix_u64(seed ^ hash_name("baseline")));
    Encoder random_backbone = Encoder::make(pretrained.cfg, pretrained.layers.size(),
                                            baseline_rng);
    PipelineResult untuned = two_round_pipeline(docs, queries, qrels, random_backbone, vocab,
                                                pcfg);
    outcome.baseline_r5 = untuned.round2_art.metrics.r5;
    return outcome;
}

Criterion check_desk_experiment() {
    Criterion c{"e2e-desk-experiment"};
    std::vector<uint64_t> seeds{101, 202, 303};
    std::vector<SeedOutcome> outcomes(seeds.size());
    std::vector<std::thread> workers;
    std::vector<std::string> errors(seeds.size());
    for (size_t i = 0; i < seeds.size(); ++i) {
        workers.emplace_back([&, i] {
            try {
                outcomes[i] = run_desk_seed(seeds[i]);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (const auto& e : errors) {
        if (!e.empty()) {
            c.pass = false;
            c.detail = "seed run failed: " + e;
            return c;
        }
    }

    double gap = 0.0, pre = 0.0, base = 0.0, r1 = 0.0;
    for (const SeedOutcome& o : outcomes) {
        gap += o.gap;
        pre += o.pretrained_r5;
        base += o.baseline_r5;
        r1 += o.round1_r5;
    }
    gap /= double(seeds.size());
    pre /= double(seeds.size());
    base /= double(seeds.size());
    r1 /= double(seeds.size());

    bool a = gap > 0.0;
    bool b = pre >= 0.6;
    bool cc = pre - base >= 0.05;
    c.pass = a && b && cc;
    std::ostringstream os;
    os << "gap " << gap << (a ? " ok" : " FAIL") << "; R@5 " << pre
       << (b ? " >= 0.6 ok" : " FAIL (< 0.6)") << "; baseline " << base << ", margin "
       << (pre - base) << (cc ? " >= 0.05 ok" : " FAIL (< 0.05)") << "; round1 R@5 " << r1;
    c.detail = os.str();
    return c;
}

Criterion check_determinism() {
    Criterion c{"determinism"};
    std::string root = scratch_root() + "/determinism";
    fs::create_directories(root);

    auto set = [](std::initializer_list<std::string> kv) {
        return std::vector<std::string>(kv);
    };
    RunConfig synth_rc = RunConfig::load(commands::synth_schema(), "",
        set({"topics=4", "docs_per_topic=5", "queries=8", "seed=13"}));
    commands::cmd_synth(synth_rc, root);
    std::string corpus = root + "/synth/corpus.jsonl";

    auto pretrain_pair = [&](const std::string& out) {
        RunConfig rc = RunConfig::load(commands::pretrain1_schema(), "",
            set({"corpus=" + corpus, "steps=30", "hidden=16", "heads=2", "ff=24",
                 "n_early=1", "n_late=1", "n_head=1", "max_len=24", "docs_per_update=4",
                 "span_min=6", "span_max=12", "seed=77", "out=" + out}));
        commands::cmd_pretrain1(rc, root);
        RunConfig rc2 = RunConfig::load(commands::pretrain2_schema(), "",
            set({"corpus=" + corpus, "init=" + root + "/" + out + "/stage1.ckpt",
                 "vocab=" + root + "/" + out + "/vocab.txt", "steps=20",
                 "docs_per_update=4", "sub_batch=2", "span_min=6", "span_max=12",
                 "seed=77", "out=" + out + "_s2"}));
        commands::cmd_pretrain2(rc2, root);
    };
    pretrain_pair("runA");
    pretrain_pair("runB");

    bool stage1_same = read_file(root + "/runA/stage1.ckpt") ==
                       read_file(root + "/runB/stage1.ckpt");
    bool stage2_same = read_file(root + "/runA_s2/backbone.ckpt") ==
                       read_file(root + "/runB_s2/backbone.ckpt");
    bool logs_same = read_file(root + "/runA/train.log") ==
                     read_file(root + "/runB/train.log") &&
                     read_file(root + "/runA_s2/train.log") ==
                     read_file(root + "/runB_s2/train.log");
    c.pass = stage1_same && stage2_same && logs_same;
    std::ostringstream os;
    os << "stage1 ckpt " << (stage1_same ? "identical" : "DIFFERS") << ", stage2 backbone "
       << (stage2_same ? "identical" : "DIFFERS") << ", logs "
       << (logs_same ? "identical" : "DIFFER");
    c.detail = os.str();
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> only(argv + 1, argv + argc);
    auto wanted = [&](const std::string& name) {
        if (only.empty()) return true;
        for (const auto& o : only) {
            if (o == name) return true;
        }
        return false;
    };

    using Runner = Criterion (*)();
    std::vector<std::pair<std::string, Runner>> criteria{
        {"gradcache-equivalence", &check_gradcache_equivalence_criterion},
        {"autodiff-soundness", &check_autodiff_soundness},
        {"contrastive-oracle", &check_contrastive_oracle},
        {"condenser-short-circuit", &check_short_circuit},
        {"exact-search-oracle", &check_exact_search},
        {"metrics-oracle", &check_metrics_oracle},
        {"e2e-desk-experiment", &check_desk_experiment},
        {"determinism", &check_determinism},
    };

    bool all_pass = true;
    for (auto& [name, runner] : criteria) {
        if (!wanted(name)) continue;
        auto t0 = std::chrono::steady_clock::now();
        Criterion c;
        try {
            c = runner();
        } catch (const std::exception& e) {
            c.name = name;
            c.pass = false;
            c.detail = std::string("exception: ") + e.what();
        }
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << " — " << c.detail << " ("
                  << std::fixed << std::setprecision(1) << c.seconds << "s)\n"
                  << std::defaultfloat;
        all_pass &= c.pass;
    }

    std::error_code ec;
    fs::remove_all(scratch_root(), ec);
    return all_pass ? 0 : 1;
}
