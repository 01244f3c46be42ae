#pragma once

// Subcommand implementations behind the CLI: each takes a merged RunConfig,
// writes its artifacts under the output directory, and echoes the effective
// configuration there. Primary outputs are timestamp-free and byte-stable
// under a fixed seed; progress chatter goes to stderr.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "cocon/checkpoint.hpp"
#include "cocon/checksuites.hpp"
#include "cocon/coloss.hpp"
#include "cocon/condenser.hpp"
#include "cocon/config.hpp"
#include "cocon/corpus.hpp"
#include "cocon/gradcache.hpp"
#include "cocon/ir_files.hpp"
#include "cocon/kvfile.hpp"
#include "cocon/metrics.hpp"
#include "cocon/pretrain.hpp"
#include "cocon/retriever.hpp"
#include "cocon/synth.hpp"

namespace cocon::commands {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kDataError = 2;
constexpr int kCheckFailure = 3;

// ---------------------------------------------------------------------------
// model file helpers
// ---------------------------------------------------------------------------

inline void save_condenser(const CondenserModel& model, const std::string& ckpt,
                           const std::string& meta) {
    save_checkpoint(model.params(), ckpt);
    auto kv = model.cfg.to_kv();
    kv["kind"] = "condenser";
    write_kv_file(meta, kv);
}

inline CondenserModel load_condenser(const std::string& ckpt, const std::string& meta) {
    auto kv = read_kv_file(meta);
    if (!kv.count("kind") || kv.at("kind") != "condenser") {
        throw DataError(meta + ": not a condenser model description");
    }
    return CondenserModel::from_params(CondenserConfig::from_kv(kv), load_checkpoint(ckpt));
}

inline void save_encoder(const Encoder& enc, const std::string& ckpt, const std::string& meta) {
    ParameterSet ps;
    enc.collect_params(ps);
    save_checkpoint(ps, ckpt);
    write_kv_file(meta, {{"kind", "encoder"},
                         {"hidden", std::to_string(enc.cfg.hidden)},
                         {"heads", std::to_string(enc.cfg.heads)},
                         {"ff", std::to_string(enc.cfg.ff)},
                         {"max_len", std::to_string(enc.cfg.max_len)},
                         {"vocab_size", std::to_string(enc.cfg.vocab_size)},
                         {"ln_eps", std::to_string(enc.cfg.ln_eps)},
                         {"n_layers", std::to_string(enc.layers.size())}});
}

inline EncoderConfig encoder_config_from_kv(const std::map<std::string, std::string>& kv) {
    EncoderConfig cfg;
    cfg.hidden = std::stoul(kv.at("hidden"));
    cfg.heads = std::stoul(kv.at("heads"));
    cfg.ff = std::stoul(kv.at("ff"));
    cfg.max_len = std::stoul(kv.at("max_len"));
    cfg.vocab_size = std::stoul(kv.at("vocab_size"));
    cfg.ln_eps = std::stod(kv.at("ln_eps"));
    return cfg;
}

inline Encoder load_encoder(const std::string& ckpt, const std::string& meta) {
    auto kv = read_kv_file(meta);
    if (!kv.count("kind") || kv.at("kind") != "encoder") {
        throw DataError(meta + ": not an encoder description");
    }
    return Encoder::from_params(encoder_config_from_kv(kv), std::stoul(kv.at("n_layers")),
                                load_checkpoint(ckpt));
}

inline void save_biencoder(const BiEncoder& bi, const std::string& ckpt,
                           const std::string& meta) {
    ParameterSet ps;
    bi.collect_params(ps);
    save_checkpoint(ps, ckpt);
    write_kv_file(meta, {{"kind", "biencoder"},
                         {"hidden", std::to_string(bi.q_enc.cfg.hidden)},
                         {"heads", std::to_string(bi.q_enc.cfg.heads)},
                         {"ff", std::to_string(bi.q_enc.cfg.ff)},
                         {"max_len", std::to_string(bi.q_enc.cfg.max_len)},
                         {"vocab_size", std::to_string(bi.q_enc.cfg.vocab_size)},
                         {"ln_eps", std::to_string(bi.q_enc.cfg.ln_eps)},
                         {"n_layers", std::to_string(bi.q_enc.layers.size())},
                         {"shared", bi.shared ? "true" : "false"}});
}

inline BiEncoder load_biencoder(const std::string& ckpt, const std::string& meta) {
    auto kv = read_kv_file(meta);
    if (!kv.count("kind") || kv.at("kind") != "biencoder") {
        throw DataError(meta + ": not a bi-encoder description");
    }
    return BiEncoder::from_params(encoder_config_from_kv(kv), std::stoul(kv.at("n_layers")),
                                  load_checkpoint(ckpt), kv.at("shared") == "true");
}

// meta path convention: model.ckpt ↔ model.meta
inline std::string meta_path(const std::string& ckpt) {
    std::filesystem::path p(ckpt);
    p.replace_extension(".meta");
    return p.string();
}

namespace detail {

inline std::string join(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

inline void require_file(const std::string& path, const std::string& hint) {
    if (path.empty() || !std::filesystem::exists(path)) {
        throw DataError("missing required input '" + path + "': " + hint);
    }
}

inline CondenserConfig model_config_from(const RunConfig& rc, size_t vocab_size) {
    CondenserConfig mc;
    mc.n_early = rc.u64("n_early");
    mc.n_late = rc.u64("n_late");
    mc.n_head = rc.u64("n_head");
    mc.hidden = rc.u64("hidden");
    mc.heads = rc.u64("heads");
    mc.ff = rc.u64("ff");
    mc.max_len = rc.u64("max_len");
    mc.mask_rate = rc.f64("mask_rate");
    mc.init_std = rc.f64("init_std");
    mc.vocab_size = vocab_size;
    mc.validate();
    return mc;
}

inline PretrainConfig pretrain_config_from(const RunConfig& rc) {
    PretrainConfig cfg;
    cfg.docs_per_update = rc.u64("docs_per_update");
    cfg.total_steps = rc.u64("steps");
    cfg.lr = rc.f64("lr");
    cfg.weight_decay = rc.f64("weight_decay");
    cfg.warmup_steps = rc.u64("warmup");
    cfg.seed = rc.u64("seed");
    cfg.span_min = rc.u64("span_min");
    cfg.span_max = rc.u64("span_max");
    cfg.mask_rate = rc.f64("mask_rate");
    cfg.checkpoint_every = rc.u64("checkpoint_every");
    cfg.validate();
    return cfg;
}

inline void write_metrics(const MetricReport& rep, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << std::setprecision(17);
    os << "MRR@10\t" << rep.mrr10 << '\n'
       << "R@5\t" << rep.r5 << '\n'
       << "R@20\t" << rep.r20 << '\n'
       << "R@100\t" << rep.r100 << '\n'
       << "R@1000\t" << rep.r1000 << '\n'
       << "evaluated\t" << rep.evaluated << '\n'
       << "skipped\t" << rep.skipped << '\n';
}

inline void print_metrics(const MetricReport& rep, const std::string& label) {
    std::cout << label << '\n'
              << "  MRR@10  " << rep.mrr10 << '\n'
              << "  R@5     " << rep.r5 << '\n'
              << "  R@20    " << rep.r20 << '\n'
              << "  R@100   " << rep.r100 << '\n'
              << "  R@1000  " << rep.r1000 << '\n'
              << "  evaluated " << rep.evaluated << "  skipped " << rep.skipped << '\n';
}

}  // namespace detail

// ---------------------------------------------------------------------------
// schemas
// ---------------------------------------------------------------------------

inline ConfigSchema common_keys(std::string default_out) {
    return {
        {"out", {std::move(default_out), "output directory (under the output root)"}},
        {"seed", {"42", "root seed for every random stream"}},
    };
}

inline ConfigSchema pretrain1_schema() {
    ConfigSchema s = common_keys("stage1");
    s["corpus"] = {"", "training corpus, JSON lines with id/text"};
    s["vocab"] = {"", "existing vocabulary file; empty builds one from the corpus"};
    s["vocab_max"] = {"8000", "max corpus words when building the vocabulary"};
    s["n_early"] = {"2", "early backbone layers"};
    s["n_late"] = {"2", "late backbone layers"};
    s["n_head"] = {"2", "head layers"};
    s["hidden"] = {"64", "hidden width"};
    s["heads"] = {"4", "attention heads"};
    s["ff"] = {"256", "feed-forward width"};
    s["max_len"] = {"128", "max sequence length"};
    s["mask_rate"] = {"0.15", "MLM corruption rate"};
    s["init_std"] = {"0.02", "weight init standard deviation"};
    s["steps"] = {"1000", "training steps"};
    s["lr"] = {"1e-4", "peak learning rate"};
    s["weight_decay"] = {"0.01", "decoupled weight decay"};
    s["warmup"] = {"0", "linear warmup steps"};
    s["docs_per_update"] = {"32", "documents per weight update"};
    s["span_min"] = {"10", "minimum span length"};
    s["span_max"] = {"64", "maximum span length"};
    s["checkpoint_every"] = {"0", "periodic snapshot cadence (0 = none)"};
    s["resume"] = {"", "snapshot to resume from"};
    return s;
}

inline ConfigSchema pretrain2_schema() {
    ConfigSchema s = pretrain1_schema();
    s["out"] = {"stage2", "output directory (under the output root)"};
    s["init"] = {"", "stage-1 condenser checkpoint (.ckpt with .meta beside it)"};
    s["heldout"] = {"", "held-out documents for the alignment probe (JSON lines)"};
    s["sub_batch"] = {"4", "gradient-cache sub-batch size"};
    s["probe_every"] = {"200", "alignment probe cadence in steps"};
    s.erase("vocab_max");
    s.erase("n_early");
    s.erase("n_late");
    s.erase("n_head");
    s.erase("hidden");
    s.erase("heads");
    s.erase("ff");
    s.erase("max_len");
    s.erase("init_std");
    s["vocab"] = {"", "vocabulary file from stage 1 (required)"};
    return s;
}

inline ConfigSchema finetune_schema() {
    ConfigSchema s = common_keys("finetune");
    s["corpus"] = {"", "passage collection, JSON lines"};
    s["queries"] = {"", "queries TSV: qid<TAB>text"};
    s["qrels"] = {"", "judgments TSV: qid<TAB>pid"};
    s["backbone"] = {"", "pre-trained backbone checkpoint (.ckpt, .meta beside it)"};
    s["vocab"] = {"", "vocabulary file"};
    s["batch"] = {"8", "triples per fine-tuning step"};
    s["epochs"] = {"3", "passes over the triples"};
    s["lr"] = {"3e-4", "peak learning rate"};
    s["weight_decay"] = {"0.01", "decoupled weight decay"};
    s["negs_per_step"] = {"4", "negatives drawn per triple per step"};
    s["in_batch"] = {"false", "add other triples' passages to the denominator"};
    s["shared_weights"] = {"false", "share one encoder between queries and passages"};
    s["dropout"] = {"0", "hidden dropout rate during fine-tuning"};
    s["bm25_k1"] = {"0.9", "BM25 k1"};
    s["bm25_b"] = {"0.4", "BM25 b"};
    s["bm25_negs"] = {"8", "BM25 negatives per query for round 1"};
    s["bm25_depth"] = {"30", "BM25 candidate depth"};
    s["mine_depth"] = {"30", "dense candidates inspected per query when mining"};
    s["mine_per_query"] = {"8", "mined negatives appended per query"};
    s["run_depth"] = {"1000", "ranked-list depth for emitted runs"};
    return s;
}

inline ConfigSchema mine_schema() {
    ConfigSchema s = common_keys("mine");
    s["corpus"] = {"", "passage collection, JSON lines"};
    s["queries"] = {"", "queries TSV"};
    s["qrels"] = {"", "judgments TSV (known positives to exclude)"};
    s["triples"] = {"", "triples to complement, JSON lines"};
    s["biencoder"] = {"", "round-1 bi-encoder checkpoint"};
    s["vocab"] = {"", "vocabulary file"};
    s["qrels"] = {"", "judgments TSV (known positives to exclude, optional)"};
    s["depth"] = {"30", "dense candidates inspected per query"};
    s["per_query"] = {"8", "negatives appended per query"};
    return s;
}

inline ConfigSchema index_schema() {
    ConfigSchema s = common_keys("index");
    s["corpus"] = {"", "passage collection, JSON lines"};
    s["encoder"] = {"", "encoder or bi-encoder checkpoint (passage side is used)"};
    s["vocab"] = {"", "vocabulary file"};
    return s;
}

inline ConfigSchema search_schema() {
    ConfigSchema s = common_keys("search");
    s["index"] = {"", "index file produced by the index command"};
    s["queries"] = {"", "queries TSV"};
    s["encoder"] = {"", "encoder or bi-encoder checkpoint (query side is used)"};
    s["vocab"] = {"", "vocabulary file"};
    s["k"] = {"100", "results per query"};
    s["tag"] = {"cocondenser", "run tag written to the TREC file"};
    return s;
}

inline ConfigSchema eval_schema() {
    ConfigSchema s = common_keys("eval");
    s["run"] = {"", "TREC run file"};
    s["qrels"] = {"", "judgments TSV"};
    return s;
}

inline ConfigSchema gradcheck_schema() {
    ConfigSchema s = common_keys("gradcheck");
    s["inject_broken_gradient"] = {"false", "test hook: sabotage one backward rule"};
    return s;
}

inline ConfigSchema synth_schema() {
    ConfigSchema s = common_keys("synth");
    s["topics"] = {"20", "number of topics"};
    s["docs_per_topic"] = {"10", "documents per topic"};
    s["queries"] = {"40", "number of queries"};
    s["heldout_per_topic"] = {"2", "held-out documents per topic"};
    s["keywords_per_topic"] = {"12", "keyword set size per topic"};
    s["keywords_per_doc"] = {"8", "keywords used by each document"};
    s["filler_vocab"] = {"120", "shared filler vocabulary size"};
    s["doc_len_min"] = {"60", "minimum document length in tokens"};
    s["doc_len_max"] = {"100", "maximum document length in tokens"};
    s["keyword_rate"] = {"0.45", "probability a token is a topic keyword"};
    s["query_len"] = {"4", "keywords per query"};
    return s;
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

inline int cmd_synth(const RunConfig& rc, const std::string& out_root) {
    std::string out = ensure_out_dir(out_root, rc.str("out"));
    rc.echo(detail::join(out, "config.echo"));

    SynthConfig cfg;
    cfg.n_topics = rc.u64("topics");
    cfg.docs_per_topic = rc.u64("docs_per_topic");
    cfg.n_queries = rc.u64("queries");
    cfg.heldout_per_topic = rc.u64("heldout_per_topic");
    cfg.seed = rc.u64("seed");
    cfg.keywords_per_topic = rc.u64("keywords_per_topic");
    cfg.keywords_per_doc = rc.u64("keywords_per_doc");
    cfg.filler_vocab = rc.u64("filler_vocab");
    cfg.doc_len_min = rc.u64("doc_len_min");
    cfg.doc_len_max = rc.u64("doc_len_max");
    cfg.keyword_rate = rc.f64("keyword_rate");
    cfg.query_len = rc.u64("query_len");

    SyntheticData data = make_synthetic_corpus(cfg);
    save_corpus(data.corpus, detail::join(out, "corpus.jsonl"));
    save_corpus(data.heldout, detail::join(out, "heldout.jsonl"));
    save_queries(data.queries, detail::join(out, "queries.tsv"));
    save_qrels(data.qrels, detail::join(out, "qrels.tsv"));

    size_t judged = 0;
    for (const auto& [qid, pids] : data.qrels) judged += pids.size();
    std::cerr << "synth: " << data.corpus.size() << " documents, " << data.heldout.size()
              << " held out, " << data.queries.size() << " queries, " << judged
              << " relevance judgments -> " << out << "\n";
    return kOk;
}

inline int cmd_pretrain1(const RunConfig& rc, const std::string& out_root) {
    std::string out = ensure_out_dir(out_root, rc.str("out"));
    rc.echo(detail::join(out, "config.echo"));
    detail::require_file(rc.str("corpus"), "pass corpus=<path to corpus.jsonl>");

    std::vector<Document> docs = load_corpus(rc.str("corpus"));
    Vocabulary vocab;
    if (!rc.empty("vocab")) {
        vocab = Vocabulary::load(rc.str("vocab"));
    } else {
        std::vector<std::string> texts;
        for (const auto& d : docs) texts.push_back(d.text);
        vocab = Vocabulary::build(texts, rc.u64("vocab_max"));
    }
    vocab.save(detail::join(out, "vocab.txt"));
    tokenize_documents(docs, vocab);

    PretrainConfig cfg = detail::pretrain_config_from(rc);
    auto [eligible, excluded] = filter_eligible(docs, cfg.span_min);
    if (excluded > 0) {
        std::cerr << "pretrain1: excluded " << excluded << " documents shorter than "
                  << 2 * cfg.span_min << " tokens\n";
    }
    if (eligible.empty()) throw DataError("pretrain1: no eligible documents in the corpus");

    CondenserConfig mc = detail::model_config_from(rc, vocab.size());
    RngStream init_rng = RngStream::substream(cfg.seed, "init1");
    CondenserModel model = CondenserModel::make(mc, init_rng);
    ParameterSet params = model.params();
    AdamW opt(params, {0.9, 0.999, 1e-8, cfg.weight_decay});

    size_t start_step = 0;
    if (!rc.empty("resume")) {
        detail::require_file(rc.str("resume"), "snapshot to resume from");
        start_step = resume_from_snapshot(model, params, opt, rc.str("resume"));
        std::cerr << "pretrain1: resumed from step " << start_step << "\n";
    }

    std::ofstream log(detail::join(out, "train.log"), std::ios::binary | std::ios::trunc);
    run_stage1(model, params, opt, eligible, cfg, log, out, start_step);

    save_condenser(model, detail::join(out, "stage1.ckpt"), detail::join(out, "stage1.meta"));
    std::cerr << "pretrain1: wrote " << detail::join(out, "stage1.ckpt") << "\n";
    return kOk;
}

inline int cmd_pretrain2(const RunConfig& rc, const std::string& out_root) {
    std::string out = ensure_out_dir(out_root, rc.str("out"));
    rc.echo(detail::join(out, "config.echo"));
    detail::require_file(rc.str("corpus"), "pass corpus=<path to the target corpus>");
    if (rc.empty("init") || !std::filesystem::exists(rc.str("init"))) {
        throw DataError("pretrain2 needs a stage-1 checkpoint: run pretrain1 first and pass "
                        "init=<stage1.ckpt>");
    }
    detail::require_file(rc.str("vocab"), "pass vocab=<stage-1 vocab.txt>");

    Vocabulary vocab = Vocabulary::load(rc.str("vocab"));
    CondenserModel model = load_condenser(rc.str("init"), meta_path(rc.str("init")));
    if (model.cfg.vocab_size != vocab.size()) {
        throw DataError("pretrain2: model vocabulary size " +
                        std::to_string(model.cfg.vocab_size) + " does not match vocab file (" +
                        std::to_string(vocab.size()) + " entries)");
    }

    std::vector<Document> docs = load_corpus(rc.str("corpus"));
    tokenize_documents(docs, vocab);
    PretrainConfig cfg = detail::pretrain_config_from(rc);
    cfg.sub_batch = rc.u64("sub_batch");
    cfg.probe_every = rc.u64("probe_every");
    auto [eligible, excluded] = filter_eligible(docs, cfg.span_min);
    if (excluded > 0) {
        std::cerr << "pretrain2: excluded " << excluded << " documents shorter than "
                  << 2 * cfg.span_min << " tokens\n";
    }
    if (eligible.empty()) throw DataError("pretrain2: no eligible documents in the corpus");

    std::vector<Document> heldout;
    if (!rc.empty("heldout")) {
        heldout = load_corpus(rc.str("heldout"));
        tokenize_documents(heldout, vocab);
    }

    ParameterSet params = model.params();
    AdamW opt(params, {0.9, 0.999, 1e-8, cfg.weight_decay});
    size_t start_step = 0;
    if (!rc.empty("resume")) {
        detail::require_file(rc.str("resume"), "snapshot to resume from");
        start_step = resume_from_snapshot(model, params, opt, rc.str("resume"));
        std::cerr << "pretrain2: resumed from step " << start_step << "\n";
    }

    std::ofstream log(detail::join(out, "train.log"), std::ios::binary | std::ios::trunc);
    std::ofstream probe_log(detail::join(out, "probe.log"), std::ios::binary | std::ios::trunc);
    Stage2Options options;
    if (!heldout.empty()) {
        options.heldout = &heldout;
        options.probe_log = &probe_log;
    }
    run_stage2(model, params, opt, eligible, cfg, log, options, out, start_step);

    // the stage artifact is the stripped backbone
    Encoder backbone = strip_head(model);
    save_encoder(backbone, detail::join(out, "backbone.ckpt"),
                 detail::join(out, "backbone.meta"));
    std::cerr << "pretrain2: wrote " << detail::join(out, "backbone.ckpt") << "\n";
    return kOk;
}

inline int cmd_finetune(const RunConfig& rc, const std::string& out_root) {
    std::string out = ensure_out_dir(out_root, rc.str("out"));
    rc.echo(detail::join(out, "config.echo"));
    detail::require_file(rc.str("corpus"), "pass corpus=<passages.jsonl>");
    detail::require_file(rc.str("queries"), "pass queries=<queries.tsv>");
    detail::require_file(rc.str("qrels"), "pass qrels=<qrels.tsv>");
    detail::require_file(rc.str("backbone"), "pass backbone=<backbone.ckpt from pretrain2>");

    detail::require_file(rc.str("vocab"), "pass vocab=<vocab.txt from pretraining>");

    Encoder backbone = load_encoder(rc.str("backbone"), meta_path(rc.str("backbone")));
    Vocabulary vocab = Vocabulary::load(rc.str("vocab"));
    if (backbone.cfg.vocab_size != vocab.size()) {
        throw DataError("finetune: backbone vocabulary size " +
                        std::to_string(backbone.cfg.vocab_size) + " does not match " +
                        rc.str("vocab"));
    }

    std::vector<Document> docs = load_corpus(rc.str("corpus"));
    std::vector<Query> queries = load_queries(rc.str("queries"));
    Qrels qrels = load_qrels(rc.str("qrels"));

    PipelineConfig cfg;
    cfg.finetune.batch = rc.u64("batch");
    cfg.finetune.epochs = rc.u64("epochs");
    cfg.finetune.lr = rc.f64("lr");
    cfg.finetune.weight_decay = rc.f64("weight_decay");
    cfg.finetune.negs_per_step = rc.u64("negs_per_step");
    cfg.finetune.in_batch = rc.flag("in_batch");
    cfg.finetune.shared_weights = rc.flag("shared_weights");
    cfg.finetune.dropout = rc.f64("dropout");
    cfg.finetune.seed = rc.u64("seed");
    cfg.bm25.k1 = rc.f64("bm25_k1");
    cfg.bm25.b = rc.f64("bm25_b");
    cfg.bm25_negs_per_query = rc.u64("bm25_negs");
    cfg.bm25_depth = rc.u64("bm25_depth");
    cfg.mining.depth = rc.u64("mine_depth");
    cfg.mining.per_query = rc.u64("mine_per_query");
    cfg.run_depth = rc.u64("run_depth");

    std::ofstream ft_log(detail::join(out, "finetune.log"), std::ios::binary | std::ios::trunc);
    PipelineResult result = two_round_pipeline(docs, queries, qrels, backbone, vocab, cfg,
                                               &ft_log);

    save_triples(result.bm25_triples, detail::join(out, "triples_round1.jsonl"));
    save_triples(result.augmented_triples, detail::join(out, "triples_round2.jsonl"));
    save_run(result.round1_art.run, detail::join(out, "round1.run"), "round1");
    save_run(result.round2_art.run, detail::join(out, "round2.run"), "round2");
    detail::write_metrics(result.round1_art.metrics, detail::join(out, "round1.metrics"));
    detail::write_metrics(result.round2_art.metrics, detail::join(out, "round2.metrics"));
    save_biencoder(result.round2, detail::join(out, "biencoder.ckpt"),
                   detail::join(out, "biencoder.meta"));

    std::cerr << "finetune: mined " << result.mining.mined << " hard negatives ("
              << result.mining.empty << " queries yielded none)\n";
    detail::print_metrics(result.round1_art.metrics, "round 1");
    detail::print_metrics(result.round2_art.metrics, "round 2");
    return kOk;
}

inline int cmd_mine(const RunConfig& rc, const std::string& out_root) {
    std::string out = ensure_out_dir(out_root, rc.str("out"));
    rc.echo(detail::join(out, "config.echo"));
    detail::require_file(rc.str("corpus"), "pass corpus=<passages.jsonl>");
    detail::require_file(rc.str("queries"), "pass queries=<queries.tsv>");
    detail::require_file(rc.str("triples"), "pass triples=<triples.jsonl>");
    detail::require_file(rc.str("biencoder"), "pass biencoder=<biencoder.ckpt>");

    detail::require_file(rc.str("vocab"), "pass vocab=<vocab.txt>");

    BiEncoder bi = load_biencoder(rc.str("biencoder"), meta_path(rc.str("biencoder")));
    Vocabulary vocab = Vocabulary::load(rc.str("vocab"));
    std::vector<Document> docs = load_corpus(rc.str("corpus"));
    std::vector<Query> queries = load_queries(rc.str("queries"));
    std::vector<TrainingTriple> triples = load_triples(rc.str("triples"));
    Qrels qrels;
    if (!rc.empty("qrels")) qrels = load_qrels(rc.str("qrels"));

    std::map<std::string, std::string> query_text;
    for (const Query& q : queries) query_text[q.qid] = q.text;

    MiningConfig cfg;
    cfg.depth = rc.u64("depth");
    cfg.per_query = rc.u64("per_query");
    MiningStats stats = mine_hard_negatives(bi, triples, docs, vocab, query_text, qrels, cfg);

    save_triples(triples, detail::join(out, "triples.jsonl"));
    std::cerr << "mine: appended " << stats.mined << " negatives across " << stats.queries
              << " queries (" << stats.empty << " yielded none) -> "
              << detail::join(out, "triples.jsonl") << "\n";
    return kOk;
}

inline int cmd_index(const RunConfig& rc, const std::string& out_root) {
    std::string out = ensure_out_dir(out_root, rc.str("out"));
    rc.echo(detail::join(out, "config.echo"));
    detail::require_file(rc.str("corpus"), "pass corpus=<passages.jsonl>");
    detail::require_file(rc.str("encoder"), "pass encoder=<ckpt>");
    detail::require_file(rc.str("vocab"), "pass vocab=<vocab.txt>");

    Vocabulary vocab = Vocabulary::load(rc.str("vocab"));
    std::vector<Document> docs = load_corpus(rc.str("corpus"));

    auto kv = read_kv_file(meta_path(rc.str("encoder")));
    RetrievalIndex index;
    if (kv.at("kind") == "biencoder") {
        BiEncoder bi = load_biencoder(rc.str("encoder"), meta_path(rc.str("encoder")));
        index = build_index(bi.passage_encoder(), docs, vocab);
    } else {
        Encoder enc = load_encoder(rc.str("encoder"), meta_path(rc.str("encoder")));
        index = build_index(enc, docs, vocab);
    }
    save_index(index, detail::join(out, "index.bin"));
    std::cerr << "index: " << index.size() << " passages, dim " << index.dim << " -> "
              << detail::join(out, "index.bin") << "\n";
    return kOk;
}

inline int cmd_search(const RunConfig& rc, const std::string& out_root) {
    std::string out = ensure_out_dir(out_root, rc.str("out"));
    rc.echo(detail::join(out, "config.echo"));
    detail::require_file(rc.str("index"), "pass index=<index.bin>");
    detail::require_file(rc.str("queries"), "pass queries=<queries.tsv>");
    detail::require_file(rc.str("encoder"), "pass encoder=<ckpt>");
    detail::require_file(rc.str("vocab"), "pass vocab=<vocab.txt>");

    Vocabulary vocab = Vocabulary::load(rc.str("vocab"));
    RetrievalIndex index = load_index(rc.str("index"));
    std::vector<Query> queries = load_queries(rc.str("queries"));
    size_t k = rc.u64("k");

    auto kv = read_kv_file(meta_path(rc.str("encoder")));
    Encoder query_encoder;
    if (kv.at("kind") == "biencoder") {
        query_encoder = load_biencoder(rc.str("encoder"), meta_path(rc.str("encoder"))).q_enc;
    } else {
        query_encoder = load_encoder(rc.str("encoder"), meta_path(rc.str("encoder")));
    }

    if (k > index.size()) {
        std::cerr << "search: k=" << k << " exceeds the collection (" << index.size()
                  << "); returning every passage\n";
    }
    std::vector<RankedList> run;
    for (const Query& q : queries) {
        std::vector<double> emb = encode_query(query_encoder, vocab, q.text);
        run.push_back(search(index, emb, std::min(k, index.size()), q.qid));
    }
    save_run(run, detail::join(out, "run.trec"), rc.str("tag"));
    std::cerr << "search: wrote " << detail::join(out, "run.trec") << "\n";
    return kOk;
}

inline int cmd_eval(const RunConfig& rc, const std::string& out_root) {
    std::string out = ensure_out_dir(out_root, rc.str("out"));
    rc.echo(detail::join(out, "config.echo"));
    detail::require_file(rc.str("run"), "pass run=<run.trec>");
    detail::require_file(rc.str("qrels"), "pass qrels=<qrels.tsv>");

    std::vector<RankedList> run = load_run(rc.str("run"));
    Qrels qrels = load_qrels(rc.str("qrels"));
    MetricReport rep = evaluate_run(run, qrels);
    detail::write_metrics(rep, detail::join(out, "metrics.txt"));
    detail::print_metrics(rep, rc.str("run"));
    return kOk;
}

inline int cmd_gradcheck(const RunConfig& rc, const std::string& out_root) {
    std::string out = ensure_out_dir(out_root, rc.str("out"));
    rc.echo(detail::join(out, "config.echo"));

    std::vector<CheckResult> results = run_check_suites(rc.flag("inject_broken_gradient"));
    bool all_pass = true;
    for (const CheckResult& r : results) {
        std::cout << "suite " << r.suite << " max_err " << r.max_err << " tol " << r.tolerance
                  << ' ' << (r.pass ? "PASS" : "FAIL") << '\n';
        all_pass &= r.pass;
    }
    return all_pass ? kOk : kCheckFailure;
}

}  // namespace cocon::commands
