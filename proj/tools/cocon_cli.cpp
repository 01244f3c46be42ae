// Command-line driver. Every subcommand reads an optional key=value config
// file plus --set overrides, runs one pipeline stage, and leaves its
// artifacts (with an effective-config echo) under the output root.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 check failure.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cocon/commands.hpp"

namespace {

struct SubArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_root;
};

void attach_common(CLI::App* sub, SubArgs& args, const cocon::ConfigSchema& schema) {
    sub->add_option("-c,--config", args.config_path, "key=value config file");
    std::string help = "override a config key (repeatable). Keys:";
    for (const auto& [k, v] : schema) {
        help += "\n  " + k + " (default '" + v.def + "'): " + v.help;
    }
    sub->add_option("-s,--set", args.overrides, help);
    sub->add_option("-o,--out-root", args.out_root,
                    "output root (default $COCONDENSER_OUT or ./runs)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Condenser-style contrastive pre-training and dense retrieval, end to end"};
    app.require_subcommand(1);

    struct Entry {
        const char* name;
        const char* desc;
        cocon::ConfigSchema schema;
        int (*run)(const cocon::RunConfig&, const std::string&);
    };
    using namespace cocon::commands;
    std::vector<Entry> entries{
        {"synth", "generate a synthetic topical corpus with queries and qrels",
         synth_schema(), &cmd_synth},
        {"pretrain1", "stage 1: masked-language-model pre-training of the condenser",
         pretrain1_schema(), &cmd_pretrain1},
        {"pretrain2", "stage 2: corpus-aware contrastive pre-training (gradient cache)",
         pretrain2_schema(), &cmd_pretrain2},
        {"finetune", "two-round bi-encoder fine-tuning with BM25 and mined negatives",
         finetune_schema(), &cmd_finetune},
        {"mine", "complement triples with hard negatives from a trained retriever",
         mine_schema(), &cmd_mine},
        {"index", "encode a passage collection into an exact inner-product index",
         index_schema(), &cmd_index},
        {"search", "run queries against an index, emit a TREC run file",
         search_schema(), &cmd_search},
        {"eval", "score a run file against qrels (MRR@10, R@5/20/100/1000)",
         eval_schema(), &cmd_eval},
        {"gradcheck", "finite-difference and gradient-cache self-checks on toy configs",
         gradcheck_schema(), &cmd_gradcheck},
    };

    std::vector<SubArgs> args(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) {
        CLI::App* sub = app.add_subcommand(entries[i].name, entries[i].desc);
        attach_common(sub, args[i], entries[i].schema);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kUsage;
    }

    for (size_t i = 0; i < entries.size(); ++i) {
        if (!app.got_subcommand(entries[i].name)) continue;
        try {
            cocon::RunConfig rc = cocon::RunConfig::load(entries[i].schema,
                                                         args[i].config_path,
                                                         args[i].overrides);
            return entries[i].run(rc, cocon::output_root(args[i].out_root));
        } catch (const cocon::ConfigError& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kUsage;
        } catch (const cocon::DataError& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kDataError;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kDataError;
        }
    }
    return kUsage;
}
