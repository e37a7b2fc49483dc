// titleforge: domain-controlled title generation pipeline.
// Subcommands cover the whole chain: ingest -> build-vocab -> train ->
// generate -> evaluate, plus the human-evaluation study service.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "titleforge/corpus.hpp"
#include "titleforge/decode.hpp"
#include "titleforge/humeval_service.hpp"
#include "titleforge/model.hpp"
#include "titleforge/rouge.hpp"
#include "titleforge/tokenizer.hpp"
#include "titleforge/train.hpp"

namespace fs = std::filesystem;
using namespace titleforge;

namespace {

// Every key the pipeline understands, across all subcommands. A config file
// key outside this set is a startup error (typo protection).
const std::set<std::string> kKnownKeys = {
    "input",      "out",          "seed",        "ratio",      "vocab-size", "with-domain",
    "beam-size",  "max-src-len",  "max-tgt-len", "lr",         "batch-size", "epochs",
    "eval-interval", "addr",      "prefix",      "strict",     "val",        "vocab",
    "merges",     "domains",      "ckpt",        "d-model",    "layers",     "heads",
    "d-ff",       "buckets",      "max-distance","dropout",    "max-steps",  "resume",
    "eval-rouge", "greedy",       "label",       "append",     "per-example","store",
    "static",     "operator-token"};

std::map<std::string, std::string> load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string trimmed = normalize_text(line);
        if (trimmed.empty() || trimmed[0] == '#') continue;
        const std::size_t eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected key=value");
        }
        std::string key = normalize_text(trimmed.substr(0, eq));
        std::string value = normalize_text(trimmed.substr(eq + 1));
        if (!kKnownKeys.count(key)) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": unrecognized config key '" + key + "'");
        }
        kv[key] = value;
    }
    return kv;
}

/// Settings merged from defaults, the config file, and flags (flags win).
struct Settings {
    std::map<std::string, std::string> file_values;

    std::string str(const std::string& key, const std::string& fallback) const {
        auto it = file_values.find(key);
        return it == file_values.end() ? fallback : it->second;
    }
    double num(const std::string& key, double fallback) const {
        auto it = file_values.find(key);
        return it == file_values.end() ? fallback : std::stod(it->second);
    }
    std::uint64_t uns(const std::string& key, std::uint64_t fallback) const {
        auto it = file_values.find(key);
        return it == file_values.end() ? fallback : std::stoull(it->second);
    }
    bool flag(const std::string& key, bool fallback) const {
        auto it = file_values.find(key);
        if (it == file_values.end()) return fallback;
        return it->second == "1" || it->second == "true" || it->second == "yes";
    }
};

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

std::vector<FormattedPair> load_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pair file " + path);
    return read_pair_file(in);
}

BpeModel load_bpe(const std::string& vocab_path, const std::string& merges_path) {
    BpeModel bpe;
    {
        std::ifstream in(vocab_path);
        if (!in) throw std::runtime_error("cannot open vocabulary " + vocab_path);
        bpe.vocab = load_vocabulary(in);
    }
    {
        std::ifstream in(merges_path);
        if (!in) throw std::runtime_error("cannot open merges " + merges_path);
        bpe.merges = load_merges(in);
    }
    return bpe;
}

std::string decode_generated(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::vector<int> trimmed = ids;
    while (!trimmed.empty() && trimmed.back() == Vocabulary::kEos) trimmed.pop_back();
    return decode(trimmed, vocab);
}

int cmd_ingest(const Settings& cfg, const std::string& input, const std::string& out_dir,
               double ratio, std::uint64_t seed, const std::string& prefix, bool strict) {
    std::ifstream in(input);
    if (!in) throw std::runtime_error("cannot open metadata file " + input);
    ParseResult parsed = parse_metadata(in, strict ? ErrorPolicy::Abort : ErrorPolicy::Skip);
    for (const auto& err : parsed.errors) {
        std::cerr << "line " << err.line_number << ": " << err.reason << "\n";
    }
    if (parsed.aborted) {
        std::cerr << "aborted at first malformed line\n";
        return 1;
    }
    if (parsed.records.empty()) throw std::runtime_error("no valid records in " + input);

    DatasetSplit split = split_dataset(parsed.records, ratio, seed);
    fs::create_directories(out_dir);

    std::set<std::string> tags;
    for (const auto& rec : parsed.records) {
        for (const auto& tag : rec.categories) tags.insert(tag.value);
    }
    {
        std::ofstream out(out_dir + "/domains.txt");
        for (const auto& t : tags) out << t << '\n';
    }
    auto write_split = [&](const std::vector<PaperRecord>& records, const std::string& name) {
        std::vector<FormattedPair> pairs;
        pairs.reserve(records.size());
        for (const auto& rec : records) pairs.push_back(format_source(rec, prefix, true));
        std::ofstream out(out_dir + "/" + name);
        write_pair_file(out, pairs);
    };
    write_split(split.train, "train.tsv");
    write_split(split.validation, "validation.tsv");
    std::cout << "records=" << parsed.records.size() << " skipped=" << parsed.errors.size()
              << " train=" << split.train.size() << " validation=" << split.validation.size()
              << " domains=" << tags.size() << "\n";
    (void)cfg;
    return 0;
}

int cmd_build_vocab(const std::string& input, const std::string& domains_path,
                    std::size_t vocab_size, const std::string& out_dir) {
    const auto pairs = load_pairs(input);
    std::vector<std::string> texts;
    texts.reserve(pairs.size() * 2);
    for (const auto& p : pairs) {
        texts.push_back(p.source_text);
        texts.push_back(p.target_text);
    }
    std::vector<std::string> tags;
    if (!domains_path.empty()) tags = read_lines(domains_path);
    BpeModel bpe = train_bpe(texts, vocab_size, make_reserved_tokens(tags));
    fs::create_directories(out_dir);
    {
        std::ofstream out(out_dir + "/vocab.txt");
        save_vocabulary(out, bpe.vocab);
    }
    {
        std::ofstream out(out_dir + "/merges.txt");
        save_merges(out, bpe.merges);
    }
    std::cout << "vocab=" << bpe.vocab.size() << " merges=" << bpe.merges.merges.size()
              << " reserved=" << bpe.vocab.reserved_count() << "\n";
    return 0;
}

int cmd_train(const std::string& input, const std::string& val_path, const std::string& vocab_path,
              const std::string& merges_path, const std::string& out_dir, bool with_domain,
              const ModelConfig& model_cfg_in, const TrainConfig& tcfg_in,
              const std::string& resume_path, bool eval_rouge) {
    const auto train_pairs = load_pairs(input);
    const auto val_pairs = val_path.empty() ? std::vector<FormattedPair>{} : load_pairs(val_path);
    BpeModel bpe = load_bpe(vocab_path, merges_path);

    ModelConfig model_cfg = model_cfg_in;
    model_cfg.vocab_size = bpe.vocab.size();
    TrainConfig tcfg = tcfg_in;
    fs::create_directories(out_dir);
    tcfg.checkpoint_dir = out_dir;

    TrainState resume_state{};
    const TrainState* resume = nullptr;
    if (!resume_path.empty()) {
        std::ifstream in(resume_path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open resume state " + resume_path);
        resume_state = load_train_state(in, model_cfg);
        resume = &resume_state;
    }

    RougeEvalFn rouge_fn;
    if (eval_rouge && !val_pairs.empty()) {
        rouge_fn = [&](const ModelParameters& params) {
            DecodeConfig dcfg;
            dcfg.beam_size = 1;
            dcfg.max_target_len = tcfg.max_target_len;
            std::vector<std::pair<std::string, std::string>> scored;
            for (const auto& pair : val_pairs) {
                const auto src = encode_source_ids(pair.source_text, bpe.vocab, bpe.merges,
                                                   tcfg.max_source_len, with_domain);
                const auto ids = greedy_decode(params, model_cfg, src, dcfg);
                scored.emplace_back(decode_generated(ids, bpe.vocab), pair.target_text);
            }
            const auto report = corpus_rouge(scored);
            return std::make_pair(report.rouge1, report.rougeL);
        };
    }

    TrainResult result =
        train_loop(train_pairs, val_pairs, bpe, model_cfg, tcfg, with_domain, resume, rouge_fn);
    {
        std::ofstream out(out_dir + "/ckpt-final", std::ios::binary);
        save_checkpoint(out, result.params, model_cfg);
    }
    {
        std::ofstream out(out_dir + "/ckpt-final.state", std::ios::binary);
        save_train_state(out, TrainState{result.params, result.opt_state, result.steps});
    }
    {
        std::ofstream out(out_dir + "/metrics.csv");
        result.log.write_csv(out);
    }
    if (result.skipped_steps > 0) {
        std::cerr << "warning: " << result.skipped_steps
                  << " steps skipped due to non-finite gradients\n";
    }
    std::cout << "steps=" << result.steps << " checkpoints=" << out_dir << "/ckpt-final"
              << " metrics=" << out_dir << "/metrics.csv\n";
    return 0;
}

int cmd_generate(const std::string& input, const std::string& ckpt_path,
                 const std::string& vocab_path, const std::string& merges_path,
                 const std::string& out_path, bool with_domain, const DecodeConfig& dcfg,
                 std::size_t max_src_len, bool greedy) {
    const auto pairs = load_pairs(input);
    BpeModel bpe = load_bpe(vocab_path, merges_path);
    std::ifstream ck(ckpt_path, std::ios::binary);
    if (!ck) throw std::runtime_error("cannot open checkpoint " + ckpt_path);
    Checkpoint ckpt = load_checkpoint(ck);
    if (ckpt.config.vocab_size != bpe.vocab.size()) {
        throw std::runtime_error("checkpoint/vocabulary size mismatch");
    }
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open output " + out_path);
    std::size_t line = 0;
    for (const auto& pair : pairs) {
        ++line;
        const auto src = encode_source_ids(pair.source_text, bpe.vocab, bpe.merges, max_src_len,
                                           with_domain);
        std::vector<int> ids;
        if (greedy) {
            ids = greedy_decode(ckpt.params, ckpt.config, src, dcfg);
        } else {
            ids = beam_search(ckpt.params, ckpt.config, src, dcfg).best.token_ids;
        }
        out << line << '\t' << pair.target_text << '\t' << decode_generated(ids, bpe.vocab)
            << '\n';
    }
    std::cout << "generated=" << line << " out=" << out_path << "\n";
    return 0;
}

int cmd_evaluate(const std::string& input, const std::string& out_path,
                 const std::string& per_example_path, const std::string& label,
                 const std::string& append_path) {
    std::ifstream in(input);
    if (!in) throw std::runtime_error("cannot open " + input);
    std::vector<std::pair<std::string, std::string>> pairs;  // generated, reference
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) throw std::runtime_error("expected 3 tab-separated fields");
        ids.push_back(line.substr(0, t1));
        const std::string reference = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string generated = line.substr(t2 + 1);
        pairs.emplace_back(generated, reference);
    }
    const CorpusRougeReport report = corpus_rouge(pairs);
    std::ostringstream row;
    row << report.rouge1 << ',' << report.rougeL << ',' << report.n_examples;
    std::cout << row.str() << "\n";
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << row.str() << '\n';
    }
    if (!per_example_path.empty()) {
        std::ofstream out(per_example_path);
        out << "id,rouge1,rougeL\n";
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto c = rouge_tokenize(pairs[i].first);
            const auto r = rouge_tokenize(pairs[i].second);
            out << ids[i] << ',' << rouge_n(c, r, 1).f1 * 100.0 << ',' << rouge_l(c, r).f1 * 100.0
                << '\n';
        }
    }
    if (!append_path.empty()) {
        const bool fresh = !fs::exists(append_path);
        std::ofstream out(append_path, std::ios::app);
        if (fresh) out << "data,rouge1,rougeL,n\n";
        out << (label.empty() ? "run" : label) << ',' << row.str() << '\n';
    }
    return 0;
}

int cmd_serve_study(const std::string& addr, const std::string& store,
                    const std::string& static_dir, const std::string& operator_token) {
    const std::size_t colon = addr.rfind(':');
    if (colon == std::string::npos) throw std::runtime_error("--addr must be host:port");
    const std::string host = addr.substr(0, colon);
    const int port = std::stoi(addr.substr(colon + 1));

    StudyService service(store, operator_token);
    httplib::Server server;
    service.attach(server);
    if (!static_dir.empty()) {
        if (!fs::is_directory(static_dir)) {
            throw std::runtime_error("static dir does not exist: " + static_dir);
        }
        server.set_mount_point("/", static_dir);
    }
    std::cout << "serving study API on " << host << ":" << port << "\n" << std::flush;
    if (!server.listen(host, port)) throw std::runtime_error("failed to bind " + addr);
    return 0;
}

int cmd_report(const std::string& input, const std::string& out_path) {
    std::ifstream in(input);
    if (!in) throw std::runtime_error("cannot open archive " + input);
    nlohmann::json archive = nlohmann::json::parse(in);
    StudyState state = import_study(archive);
    StudyReport report = state.aggregate();

    std::ostringstream csv;
    csv << "model";
    for (const auto& f : report.factors) csv << ',' << f;
    csv << ",mean score\n";
    csv << "human";
    for (const auto& f : report.factors) csv << ',' << format_2dp(report.human_factor_means.at(f));
    csv << ',' << format_2dp(report.human_mean_score) << "\n";
    csv << "model";
    for (const auto& f : report.factors) csv << ',' << format_2dp(report.model_factor_means.at(f));
    csv << ',' << format_2dp(report.model_mean_score) << "\n";
    csv << "scaled";
    for (const auto& f : report.factors) csv << ',' << format_2dp(report.scaled_factors.at(f));
    csv << ',' << format_2dp(report.scaled_overall) << "\n";
    std::cout << csv.str();
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << csv.str();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        // The config file (flag or TITLEFORGE_CONFIG) supplies defaults;
        // command-line flags always win.
        std::string config_path;
        for (int i = 1; i + 1 < argc; ++i) {
            if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
        }
        if (config_path.empty()) {
            if (const char* env = std::getenv("TITLEFORGE_CONFIG")) config_path = env;
        }
        Settings cfg;
        if (!config_path.empty()) cfg.file_values = load_config_file(config_path);

        CLI::App app{"titleforge: domain-controlled title generation"};
        app.require_subcommand(1);
        std::string config_flag;
        app.add_option("--config", config_flag, "key=value config file (flags override)");

        // ingest
        auto* ingest = app.add_subcommand("ingest", "parse metadata, split, write pair files");
        std::string in_input = cfg.str("input", "");
        std::string in_out = cfg.str("out", "data");
        double in_ratio = cfg.num("ratio", 0.9);
        std::uint64_t in_seed = cfg.uns("seed", 0);
        std::string in_prefix = cfg.str("prefix", "title");
        bool in_strict = cfg.flag("strict", false);
        ingest->add_option("--input", in_input, "line-delimited JSON metadata")->required(!cfg.file_values.count("input"));
        ingest->add_option("--out", in_out, "output directory");
        ingest->add_option("--ratio", in_ratio, "train fraction in (0,1)");
        ingest->add_option("--seed", in_seed, "shuffle seed");
        ingest->add_option("--prefix", in_prefix, "task prefix for source texts");
        ingest->add_flag("--strict", in_strict, "abort on the first malformed line");

        // build-vocab
        auto* bv = app.add_subcommand("build-vocab", "train the BPE vocabulary");
        std::string bv_input = cfg.str("input", "");
        std::string bv_domains = cfg.str("domains", "");
        std::uint64_t bv_size = cfg.uns("vocab-size", 2000);
        std::string bv_out = cfg.str("out", "data");
        bv->add_option("--input", bv_input, "training pair file")->required(!cfg.file_values.count("input"));
        bv->add_option("--domains", bv_domains, "domains.txt with one tag per line");
        bv->add_option("--vocab-size", bv_size, "target vocabulary size");
        bv->add_option("--out", bv_out, "output directory");

        // train
        auto* tr = app.add_subcommand("train", "train the encoder-decoder");
        std::string tr_input = cfg.str("input", "");
        std::string tr_val = cfg.str("val", "");
        std::string tr_vocab = cfg.str("vocab", "");
        std::string tr_merges = cfg.str("merges", "");
        std::string tr_out = cfg.str("out", "run");
        std::string tr_resume = cfg.str("resume", "");
        bool tr_domain = cfg.flag("with-domain", true);
        bool tr_rouge = cfg.flag("eval-rouge", false);
        TrainConfig tcfg;
        tcfg.learning_rate = cfg.num("lr", tcfg.learning_rate);
        tcfg.batch_size = cfg.uns("batch-size", tcfg.batch_size);
        tcfg.epochs = cfg.uns("epochs", tcfg.epochs);
        tcfg.max_source_len = cfg.uns("max-src-len", tcfg.max_source_len);
        tcfg.max_target_len = cfg.uns("max-tgt-len", tcfg.max_target_len);
        tcfg.eval_interval_steps = cfg.uns("eval-interval", tcfg.eval_interval_steps);
        tcfg.seed = cfg.uns("seed", tcfg.seed);
        tcfg.max_steps = cfg.uns("max-steps", 0);
        ModelConfig mcfg;
        mcfg.d_model = cfg.uns("d-model", 64);
        mcfg.num_layers = cfg.uns("layers", 2);
        mcfg.num_heads = cfg.uns("heads", 4);
        mcfg.d_ff = cfg.uns("d-ff", 256);
        mcfg.num_position_buckets = cfg.uns("buckets", 32);
        mcfg.max_relative_distance = cfg.uns("max-distance", 128);
        mcfg.dropout_rate = cfg.num("dropout", 0.0);
        tr->add_option("--input", tr_input)->required(!cfg.file_values.count("input"));
        tr->add_option("--val", tr_val, "validation pair file");
        tr->add_option("--vocab", tr_vocab)->required(!cfg.file_values.count("vocab"));
        tr->add_option("--merges", tr_merges)->required(!cfg.file_values.count("merges"));
        tr->add_option("--out", tr_out, "checkpoint/metrics directory");
        tr->add_option("--with-domain", tr_domain, "keep the @domain: control suffix");
        tr->add_option("--lr", tcfg.learning_rate);
        tr->add_option("--batch-size", tcfg.batch_size);
        tr->add_option("--epochs", tcfg.epochs);
        tr->add_option("--max-src-len", tcfg.max_source_len);
        tr->add_option("--max-tgt-len", tcfg.max_target_len);
        tr->add_option("--eval-interval", tcfg.eval_interval_steps);
        tr->add_option("--seed", tcfg.seed);
        tr->add_option("--max-steps", tcfg.max_steps, "stop after N steps (0 = run epochs)");
        tr->add_option("--d-model", mcfg.d_model);
        tr->add_option("--layers", mcfg.num_layers);
        tr->add_option("--heads", mcfg.num_heads);
        tr->add_option("--d-ff", mcfg.d_ff);
        tr->add_option("--buckets", mcfg.num_position_buckets);
        tr->add_option("--max-distance", mcfg.max_relative_distance);
        tr->add_option("--dropout", mcfg.dropout_rate);
        tr->add_option("--resume", tr_resume, "resume from a .state file");
        tr->add_option("--eval-rouge", tr_rouge, "compute validation ROUGE at evals");

        // generate
        auto* ge = app.add_subcommand("generate", "decode titles for a pair file");
        std::string ge_input = cfg.str("input", "");
        std::string ge_ckpt = cfg.str("ckpt", "");
        std::string ge_vocab = cfg.str("vocab", "");
        std::string ge_merges = cfg.str("merges", "");
        std::string ge_out = cfg.str("out", "generated.tsv");
        bool ge_domain = cfg.flag("with-domain", true);
        bool ge_greedy = cfg.flag("greedy", false);
        DecodeConfig dcfg;
        dcfg.beam_size = cfg.uns("beam-size", dcfg.beam_size);
        dcfg.max_target_len = cfg.uns("max-tgt-len", dcfg.max_target_len);
        std::uint64_t ge_max_src = cfg.uns("max-src-len", 512);
        ge->add_option("--input", ge_input)->required(!cfg.file_values.count("input"));
        ge->add_option("--ckpt", ge_ckpt)->required(!cfg.file_values.count("ckpt"));
        ge->add_option("--vocab", ge_vocab)->required(!cfg.file_values.count("vocab"));
        ge->add_option("--merges", ge_merges)->required(!cfg.file_values.count("merges"));
        ge->add_option("--out", ge_out);
        ge->add_option("--with-domain", ge_domain);
        ge->add_option("--beam-size", dcfg.beam_size);
        ge->add_option("--max-tgt-len", dcfg.max_target_len);
        ge->add_option("--max-src-len", ge_max_src);
        ge->add_flag("--greedy", ge_greedy, "greedy decoding instead of beam search");

        // evaluate
        auto* ev = app.add_subcommand("evaluate", "corpus ROUGE over generated titles");
        std::string ev_input = cfg.str("input", "");
        std::string ev_out = cfg.str("out", "");
        std::string ev_per = cfg.str("per-example", "");
        std::string ev_label = cfg.str("label", "");
        std::string ev_append = cfg.str("append", "");
        ev->add_option("--input", ev_input, "id<TAB>reference<TAB>generated file")
            ->required(!cfg.file_values.count("input"));
        ev->add_option("--out", ev_out, "write the one-line CSV here too");
        ev->add_option("--per-example", ev_per, "per-example CSV path");
        ev->add_option("--label", ev_label, "row label for --append");
        ev->add_option("--append", ev_append, "append a labelled row to a comparison CSV");

        // serve-study
        auto* sv = app.add_subcommand("serve-study", "run the human-evaluation study service");
        std::string sv_addr = cfg.str("addr", "127.0.0.1:8080");
        std::string sv_store = cfg.str("store", "");
        std::string sv_static = cfg.str("static", "");
        std::string sv_token = cfg.str("operator-token", "");
        sv->add_option("--addr", sv_addr, "host:port to bind");
        sv->add_option("--store", sv_store, "append-only event log file");
        sv->add_option("--static", sv_static, "directory of rating UI assets to serve");
        sv->add_option("--operator-token", sv_token, "require this token on report/export");

        // report
        auto* rp = app.add_subcommand("report", "aggregate a study archive into a table");
        std::string rp_input = cfg.str("input", "");
        std::string rp_out = cfg.str("out", "");
        rp->add_option("--input", rp_input, "study archive JSON (from /export)")
            ->required(!cfg.file_values.count("input"));
        rp->add_option("--out", rp_out, "also write the CSV here");

        CLI11_PARSE(app, argc, argv);

        if (ingest->parsed()) {
            return cmd_ingest(cfg, in_input, in_out, in_ratio, in_seed, in_prefix, in_strict);
        }
        if (bv->parsed()) return cmd_build_vocab(bv_input, bv_domains, bv_size, bv_out);
        if (tr->parsed()) {
            return cmd_train(tr_input, tr_val, tr_vocab, tr_merges, tr_out, tr_domain, mcfg, tcfg,
                             tr_resume, tr_rouge);
        }
        if (ge->parsed()) {
            return cmd_generate(ge_input, ge_ckpt, ge_vocab, ge_merges, ge_out, ge_domain, dcfg,
                                ge_max_src, ge_greedy);
        }
        if (ev->parsed()) return cmd_evaluate(ev_input, ev_out, ev_per, ev_label, ev_append);
        if (sv->parsed()) return cmd_serve_study(sv_addr, sv_store, sv_static, sv_token);
        if (rp->parsed()) return cmd_report(rp_input, rp_out);
        std::cerr << "no subcommand given\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
