#include "cdr3gen/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "cdr3gen/baseline_ann.hpp"
#include "cdr3gen/checkpoint.hpp"
#include "cdr3gen/data_io.hpp"
#include "cdr3gen/error.hpp"
#include "cdr3gen/generate.hpp"
#include "cdr3gen/metrics.hpp"
#include "cdr3gen/physchem.hpp"
#include "cdr3gen/seqcore.hpp"
#include "cdr3gen/train.hpp"
#include "cdr3gen/util.hpp"

namespace cdr3gen::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kModule = "cli";

// Collects what a run read and wrote; written next to the outputs.
class Manifest {
public:
    Manifest(std::string subcommand, std::vector<std::string> args)
        : start_(std::chrono::system_clock::now()) {
        doc_["subcommand"] = std::move(subcommand);
        doc_["version"] = CDR3GEN_VERSION;
        doc_["argv"] = std::move(args);
        doc_["config"] = json::object();
        doc_["seeds"] = json::object();
        doc_["inputs"] = json::object();
        doc_["outputs"] = json::object();
        doc_["descriptor_checksum"] = nullptr;
    }

    json& config() { return doc_["config"]; }
    void seed(const std::string& name, std::uint64_t v) { doc_["seeds"][name] = v; }
    void input(const std::string& name, const std::string& path) {
        doc_["inputs"][name] = {{"path", path}, {"fnv1a64", hex64(fnv1a64(read_file(path)))}};
    }
    void output(const std::string& name, const std::string& path) { doc_["outputs"][name] = path; }
    void descriptors(std::optional<std::uint64_t> checksum) {
        doc_["descriptor_checksum"] = checksum ? json(hex64(*checksum)) : json(nullptr);
    }

    void write(const std::string& path) {
        const auto end = std::chrono::system_clock::now();
        const std::time_t t = std::chrono::system_clock::to_time_t(start_);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        doc_["wall_clock"] = {{"started_utc", stamp},
                              {"elapsed_seconds", std::chrono::duration<double>(end - start_).count()}};
        write_file(path, doc_.dump(2) + "\n");
    }

private:
    json doc_;
    std::chrono::system_clock::time_point start_;
};

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw Error(ErrorKind::Io, kModule, "cannot create directory " + parent.string() + ": " + ec.message());
}

// Distinct contexts in first-seen order.
std::vector<data_io::ContextKey> load_unique_contexts(const std::string& path) {
    std::vector<data_io::ContextKey> out;
    std::set<data_io::ContextKey> seen;
    for (auto& c : data_io::load_contexts(path))
        if (seen.insert(c).second) out.push_back(std::move(c));
    return out;
}

std::string manifest_path(const std::string& output) { return output + ".manifest.json"; }

physchem::DescriptorTable load_table(const std::string& path) {
    return path.empty() ? physchem::DescriptorTable::builtin() : physchem::DescriptorTable::load(path);
}

metrics::SubstitutionMatrix load_matrix(const std::string& path, int gap_open, int gap_extend) {
    metrics::SubstitutionMatrix m =
        path.empty() ? metrics::SubstitutionMatrix::blosum62() : metrics::SubstitutionMatrix::load(path);
    if (gap_open < 0 || gap_extend < 0)
        throw Error(ErrorKind::InvalidConfig, kModule, "gap penalties must be non-negative");
    m.gap_open = gap_open;
    m.gap_extend = gap_extend;
    return m;
}

void add_threads(CLI::App* app, int& threads) {
    app->add_option("--threads", threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_matrix(CLI::App* app, std::string& path, int& open, int& extend) {
    app->add_option("--matrix", path, "Substitution matrix file (default: built-in BLOSUM62)");
    app->add_option("--gap-open", open, "Gap opening penalty")->capture_default_str();
    app->add_option("--gap-extend", extend, "Gap extension penalty")->capture_default_str();
}

// Shared output schema of `generate` and `baseline ann`.
constexpr std::string_view kCandidateHeader = "mhc\tpeptide\trank\tsequence\tlogprob\te_llh\tprovenance\n";

// ---------------------------------------------------------------- split

struct SplitArgs {
    std::string in, out_dir = ".";
    std::uint64_t seed = 0;
    std::vector<int> ratios = {7, 1, 2};
    bool strict = false;
};

void run_split(const SplitArgs& a, Manifest& man, std::ostream& out) {
    if (a.ratios.size() != 3) throw Error(ErrorKind::Usage, kModule, "--ratios takes three integers");
    const data_io::SplitRatios ratios{a.ratios[0], a.ratios[1], a.ratios[2]};
    const auto triples = data_io::load_tsv(a.in);
    const data_io::SplitSet s = data_io::split_contexts(triples, ratios, a.seed, a.strict);

    man.config() = {{"ratios", a.ratios}, {"strict", a.strict}};
    man.seed("split", a.seed);
    man.input("data", a.in);
    const auto counts = s.context_counts();
    for (auto which : {data_io::Split::Train, data_io::Split::Valid, data_io::Split::Test}) {
        const std::string name(data_io::split_name(which));
        const auto& part = which == data_io::Split::Train   ? s.train
                           : which == data_io::Split::Valid ? s.valid
                                                            : s.test;
        const std::string path = (fs::path(a.out_dir) / (name + ".tsv")).string();
        ensure_parent(path);
        data_io::write_tsv(path, part);
        man.output(name, path);
        man.config()["counts"][name] = {{"triples", part.size()},
                                        {"contexts", counts[static_cast<std::size_t>(which)]}};
        out << name << '\t' << part.size() << " triples\t" << counts[static_cast<std::size_t>(which)]
            << " contexts\n";
    }
    man.write((fs::path(a.out_dir) / "manifest.json").string());
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string train, valid, out, physchem;
    model::ModelConfig model;
    train::TrainConfig cfg;
    bool no_phys = false;
};

void run_train(TrainArgs a, Manifest& man, std::ostream& out) {
    a.model.phys_enabled = !a.no_phys;
    a.model.seed = a.cfg.seed;
    a.model.validate();
    a.cfg.validate();

    const auto train_triples = data_io::load_tsv(a.train);
    const std::vector<data_io::Triple> valid_triples =
        a.valid.empty() ? std::vector<data_io::Triple>{} : data_io::load_tsv(a.valid);
    const auto train_set = train::encode_examples(train_triples);
    const auto valid_set = train::encode_examples(valid_triples);

    std::optional<physchem::DescriptorTable> table;
    if (a.model.phys_enabled) table.emplace(load_table(a.physchem));
    const physchem::DescriptorTable* tp = table ? &*table : nullptr;

    train::TrainResult r = train::train(train_set, valid_set, a.model, a.cfg, tp,
                                        [&out](const std::string& line) { out << line << '\n' << std::flush; });

    checkpoint::Checkpoint ck;
    ck.config = a.model;
    ck.params = std::move(r.best_params);
    if (tp) ck.descriptor_checksum = tp->checksum();
    ck.optimizer = std::move(r.optimizer);
    ck.metadata = {{"train_config", train::config_to_json(a.cfg)},
                   {"stop_reason", r.report.stop_reason},
                   {"best_epoch", r.report.best_epoch},
                   {"total_steps", r.report.total_steps}};
    if (r.report.best_valid_ppl) ck.metadata["best_valid_ppl"] = *r.report.best_valid_ppl;

    ensure_parent(a.out);
    checkpoint::save(a.out, ck);
    const std::string report_path = a.out + ".report.json";
    json report = r.report.to_json();
    report["parameter_count"] = ck.params.count();
    write_file(report_path, report.dump(2) + "\n");

    out << "stop " << r.report.stop_reason << " best_epoch " << r.report.best_epoch;
    if (r.report.best_valid_ppl) out << " best_valid_ppl " << format_double(*r.report.best_valid_ppl);
    out << " parameters " << ck.params.count() << '\n';

    man.config() = {{"model", checkpoint::config_to_json(a.model)}, {"train", train::config_to_json(a.cfg)}};
    man.seed("train", a.cfg.seed);
    man.input("train", a.train);
    if (!a.valid.empty()) man.input("valid", a.valid);
    if (!a.physchem.empty() && tp) man.input("physchem", a.physchem);
    man.descriptors(ck.descriptor_checksum);
    man.output("checkpoint", a.out);
    man.output("report", report_path);
    man.write(manifest_path(a.out));
}

// ------------------------------------------------------------- generate

struct GenerateArgs {
    std::string checkpoint, contexts, out, training, physchem, mode = "unique", pool = "map";
    std::string matrix;
    int gap_open = 10, gap_extend = 1;
    generate::GenConfig cfg;
};

void run_generate(GenerateArgs a, Manifest& man, std::ostream& out) {
    a.cfg.mode = a.mode == "mmr" ? generate::SelectionMode::Mmr : generate::SelectionMode::UniqueRanked;
    a.cfg.pool = a.pool == "wide" ? generate::PoolMode::Wide : generate::PoolMode::Map;
    a.cfg.validate();
    const metrics::SubstitutionMatrix matrix = load_matrix(a.matrix, a.gap_open, a.gap_extend);

    const checkpoint::Checkpoint ck = checkpoint::load(a.checkpoint);
    std::optional<physchem::DescriptorTable> table;
    if (ck.config.phys_enabled) table.emplace(load_table(a.physchem));
    const model::Model m = checkpoint::make_model(ck, table ? &*table : nullptr);

    std::unordered_set<std::string> training;
    if (!a.training.empty())
        for (const auto& t : data_io::load_tsv(a.training)) training.insert(t.tcr);
    const auto contexts = load_unique_contexts(a.contexts);

    std::string tsv(kCandidateHeader);
    std::size_t produced = 0;
    for (const auto& ctx : contexts) {
        const auto src = seqcore::encode_source(ctx.first, ctx.second).ids;
        auto raw = generate::multi_start(m, ctx, a.cfg);
        auto legal = generate::legality_filter(raw, training, a.cfg.len_min, a.cfg.len_max);
        generate::rank(m, src, legal);
        const auto selected = generate::select_diverse(legal, a.cfg.top_k, a.cfg.mode, a.cfg.mmr_lambda, matrix);
        for (std::size_t i = 0; i < selected.size(); ++i) {
            const auto& c = selected[i];
            tsv += ctx.first + '\t' + ctx.second + '\t' + std::to_string(i + 1) + '\t' + c.sequence + '\t' +
                   format_double(c.logprob) + '\t' + format_double(c.e_llh) + "\tstart=" +
                   std::to_string(c.provenance.start) + ";T=" + format_double(c.provenance.temperature) +
                   ";b=" + std::to_string(c.provenance.beam) + '\n';
        }
        produced += selected.size();
        out << ctx.first << ' ' << ctx.second << " raw " << raw.size() << " legal " << legal.size() << " selected "
            << selected.size() << '\n';
    }
    ensure_parent(a.out);
    write_file(a.out, tsv);

    man.config() = {{"generate", generate::config_to_json(a.cfg)},
                    {"model", checkpoint::config_to_json(ck.config)},
                    {"gap_open", matrix.gap_open},
                    {"gap_extend", matrix.gap_extend}};
    man.seed("generate", a.cfg.seed);
    man.input("checkpoint", a.checkpoint);
    man.input("contexts", a.contexts);
    if (!a.training.empty()) man.input("training", a.training);
    if (!a.matrix.empty()) man.input("matrix", a.matrix);
    if (!a.physchem.empty() && table) man.input("physchem", a.physchem);
    man.descriptors(ck.descriptor_checksum);
    man.output("candidates", a.out);
    man.write(manifest_path(a.out));
    out << "wrote " << produced << " candidates for " << contexts.size() << " contexts\n";
}

// ------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string pairs, truth, predictions, out = "evaluation.json", pairs_out, matrix;
    int top = 1;
    int gap_open = 10, gap_extend = 1;
    int threads = 1;
};

std::string optional_field(const data_io::Table& t, std::size_t row, std::string_view name) {
    return t.has_column(name) ? t.rows[row][t.column(name)] : std::string();
}

json summary_json(const metrics::Summary& s) {
    return {{"count", s.count},
            {"levenshtein", {{"mean", s.levenshtein_mean}, {"std", s.levenshtein_std}}},
            {"similarity", {{"mean", s.similarity_mean}, {"std", s.similarity_std}}},
            {"lcs", {{"mean", s.lcs_mean}, {"std", s.lcs_std}}}};
}

void run_evaluate(const EvaluateArgs& a, Manifest& man, std::ostream& out) {
    const metrics::SubstitutionMatrix matrix = load_matrix(a.matrix, a.gap_open, a.gap_extend);
    std::vector<metrics::PairInput> pairs;
    std::size_t unmatched = 0;
    if (!a.pairs.empty()) {
        const data_io::Table t = data_io::read_table(a.pairs);
        const std::size_t c_act = t.column("actual"), c_gen = t.column("generated");
        for (std::size_t r = 0; r < t.rows.size(); ++r)
            pairs.push_back({optional_field(t, r, "mhc"), optional_field(t, r, "peptide"), t.rows[r][c_act],
                             t.rows[r][c_gen]});
        man.input("pairs", a.pairs);
    } else {
        const auto truth = data_io::load_tsv(a.truth);
        const data_io::Table p = data_io::read_table(a.predictions);
        const std::size_t c_mhc = p.column("mhc"), c_pep = p.column("peptide"), c_rank = p.column("rank"),
                          c_seq = p.column("sequence");
        std::map<data_io::ContextKey, std::vector<std::string>> predicted;
        for (std::size_t r = 0; r < p.rows.size(); ++r) {
            int rank = 0;
            try {
                rank = std::stoi(p.rows[r][c_rank]);
            } catch (const std::exception&) {
                throw Error(ErrorKind::MalformedRow, kModule,
                            a.predictions + ":" + std::to_string(p.line_numbers[r]) + ": bad rank");
            }
            if (rank >= 1 && rank <= a.top)
                predicted[{p.rows[r][c_mhc], p.rows[r][c_pep]}].push_back(p.rows[r][c_seq]);
        }
        for (const auto& t : truth) {
            const auto it = predicted.find(data_io::context_of(t));
            if (it == predicted.end()) {
                ++unmatched;
                continue;
            }
            for (const auto& g : it->second) pairs.push_back({t.mhc, t.peptide, t.tcr, g});
        }
        man.input("truth", a.truth);
        man.input("predictions", a.predictions);
    }

    const metrics::MetricsReport rep = metrics::evaluate(pairs, matrix, a.threads);

    std::string tsv = "mhc\tpeptide\tactual\tgenerated\tlevenshtein\tsimilarity\tlcs\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& in = pairs[i];
        const auto& pm = rep.pairs[i];
        tsv += in.mhc + '\t' + in.peptide + '\t' + in.actual + '\t' + in.generated + '\t' +
               std::to_string(pm.levenshtein) + '\t' + format_double(pm.similarity) + '\t' + std::to_string(pm.lcs) +
               '\n';
    }
    json report = {{"overall", summary_json(rep.overall)},
                   {"by_mhc", json::object()},
                   {"by_peptide", json::object()},
                   {"unmatched_truth_rows", unmatched},
                   {"similarity", {{"gap_open", matrix.gap_open},
                                   {"gap_extend", matrix.gap_extend},
                                   {"normalization", "max_self_score"}}}};
    for (const auto& [k, s] : rep.by_mhc) report["by_mhc"][k] = summary_json(s);
    for (const auto& [k, s] : rep.by_peptide) report["by_peptide"][k] = summary_json(s);

    std::string pairs_out = a.pairs_out;
    if (pairs_out.empty()) pairs_out = (fs::path(a.out).replace_extension(".pairs.tsv")).string();
    ensure_parent(a.out);
    ensure_parent(pairs_out);
    write_file(a.out, report.dump(2) + "\n");
    write_file(pairs_out, tsv);

    man.config() = {{"top", a.top}, {"gap_open", matrix.gap_open}, {"gap_extend", matrix.gap_extend}};
    if (!a.matrix.empty()) man.input("matrix", a.matrix);
    man.output("report", a.out);
    man.output("pairs", pairs_out);
    man.write(manifest_path(a.out));

    const auto& s = rep.overall;
    out << "pairs " << s.count << " levenshtein " << format_double(s.levenshtein_mean) << " +- "
        << format_double(s.levenshtein_std) << " similarity " << format_double(s.similarity_mean) << " +- "
        << format_double(s.similarity_std) << " lcs " << format_double(s.lcs_mean) << " +- "
        << format_double(s.lcs_std) << '\n';
}

// --------------------------------------------------------- baseline ann

struct AnnArgs {
    std::string train, contexts, out, matrix;
    int gap_open = 10, gap_extend = 1;
    int threads = 1;
};

void run_ann(const AnnArgs& a, Manifest& man, std::ostream& out) {
    const metrics::SubstitutionMatrix matrix = load_matrix(a.matrix, a.gap_open, a.gap_extend);
    const auto triples = data_io::load_tsv(a.train);
    const baseline_ann::RetrievalIndex index(triples, matrix);
    const auto contexts = load_unique_contexts(a.contexts);

    std::string tsv(kCandidateHeader);
    for (const auto& [mhc, peptide] : contexts) {
        const auto hit = index.nearest(mhc, peptide, a.threads);
        tsv += mhc + '\t' + peptide + "\t1\t" + hit.receptor() + "\tNA\tNA\tann;similarity=" +
               format_double(hit.similarity) + ";neighbor=" + hit.entry->mhc + ':' + hit.entry->peptide + '\n';
    }
    ensure_parent(a.out);
    write_file(a.out, tsv);

    man.config() = {{"gap_open", matrix.gap_open}, {"gap_extend", matrix.gap_extend}};
    man.input("train", a.train);
    man.input("contexts", a.contexts);
    if (!a.matrix.empty()) man.input("matrix", a.matrix);
    man.output("candidates", a.out);
    man.write(manifest_path(a.out));
    out << "retrieved " << contexts.size() << " contexts from " << index.entries().size() << " indexed contexts\n";
}

// -------------------------------------------------------- physchem dump

struct DumpArgs {
    std::string physchem, out;
};

void run_dump(const DumpArgs& a, Manifest& man, std::ostream& out) {
    const physchem::DescriptorTable table = load_table(a.physchem);
    std::string text = table.serialize();
    std::ostringstream stats;
    stats << "# mean";
    for (double v : table.mean()) stats << '\t' << format_double(v);
    stats << "\n# std";
    for (double v : table.stddev()) stats << '\t' << format_double(v);
    stats << "\n# checksum\t" << hex64(table.checksum()) << '\n';
    if (a.out.empty()) {
        out << text << stats.str();
        return;
    }
    ensure_parent(a.out);
    write_file(a.out, text);
    if (!a.physchem.empty()) man.input("physchem", a.physchem);
    man.descriptors(table.checksum());
    man.output("table", a.out);
    man.write(manifest_path(a.out));
    out << stats.str();
}

// Appends `--key value` for every config-file entry whose flag is absent
// from the command line, so flags override the file.
std::vector<std::string> merge_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].starts_with("--config=")) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_file(path);
    } catch (const CLI::FileError& e) {
        throw Error(ErrorKind::Io, kModule, e.what());
    }
    const std::size_t given = args.size();
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        const std::string flag = "--" + item.name;
        const bool on_command_line = std::any_of(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(given),
                                                 [&](const std::string& a) {
                                                     return a == flag || a.starts_with(flag + "=");
                                                 });
        if (on_command_line) continue;
        if (item.inputs.size() == 1) {
            args.push_back(flag + "=" + item.inputs.front());
        } else {
            args.push_back(flag);
            args.insert(args.end(), item.inputs.begin(), item.inputs.end());
        }
    }
    return args;
}

void print_error(std::ostream& err, std::string_view kind, std::string_view module, std::string_view message) {
    err << json{{"error", {{"kind", kind}, {"module", module}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Conditional CDR3 receptor generation toolkit", "cdr3gen"};
    app.set_version_flag("--version", std::string(CDR3GEN_VERSION));
    app.require_subcommand(1);

    std::string config_file;  // consumed by merge_config

    SplitArgs split_args;
    auto* split = app.add_subcommand("split", "Partition triples into train/valid/test by context");
    split->add_option("--config", config_file, "TOML file of option values keyed by long flag name");
    split->add_option("--in", split_args.in, "Input TSV (mhc, peptide, tcr)")->required();
    split->add_option("--out-dir", split_args.out_dir, "Output directory")->capture_default_str();
    split->add_option("--seed", split_args.seed, "Shuffle seed")->required();
    split->add_option("--ratios", split_args.ratios, "train valid test weights")->expected(3)->capture_default_str();
    split->add_flag("--strict", split_args.strict, "Keep alleles and peptides disjoint across splits");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a training split");
    train_cmd->add_option("--config", config_file, "TOML file of option values keyed by long flag name");
    {
        auto& a = train_args;
        auto* c = train_cmd;
        c->add_option("--train", a.train, "Training TSV")->required();
        c->add_option("--valid", a.valid, "Validation TSV (enables early stopping)");
        c->add_option("--out", a.out, "Output checkpoint path")->required();
        c->add_option("--seed", a.cfg.seed, "Initialization and shuffling seed")->required();
        c->add_option("--physchem", a.physchem, "Descriptor table file (default: built-in)");
        c->add_flag("--no-phys", a.no_phys, "Drop the physicochemical channel");
        c->add_option("--d-tok", a.model.d_tok, "Token embedding width")->capture_default_str();
        c->add_option("--d-phys", a.model.d_phys, "Physicochemical projection width")->capture_default_str();
        c->add_option("--d-pos", a.model.d_pos, "Positional embedding width")->capture_default_str();
        c->add_option("--heads", a.model.n_head, "Attention heads")->capture_default_str();
        c->add_option("--enc-layers", a.model.n_enc, "Encoder layers")->capture_default_str();
        c->add_option("--dec-layers", a.model.n_dec, "Decoder layers")->capture_default_str();
        c->add_option("--d-ff", a.model.d_ff, "Feed-forward width")->capture_default_str();
        c->add_option("--lr", a.cfg.lr_peak, "Peak learning rate")->capture_default_str();
        c->add_option("--beta1", a.cfg.adamw.beta1, "AdamW beta1")->capture_default_str();
        c->add_option("--beta2", a.cfg.adamw.beta2, "AdamW beta2")->capture_default_str();
        c->add_option("--adam-eps", a.cfg.adamw.eps, "AdamW epsilon")->capture_default_str();
        c->add_option("--weight-decay", a.cfg.adamw.weight_decay, "Decoupled weight decay")->capture_default_str();
        c->add_option("--batch-size", a.cfg.batch_size, "Batch size")->capture_default_str();
        c->add_option("--max-epochs", a.cfg.max_epochs, "Epoch budget")->capture_default_str();
        c->add_option("--warmup-steps", a.cfg.warmup_steps, "Warmup steps (negative: 5% of the budget)")
            ->capture_default_str();
        c->add_option("--max-steps", a.cfg.max_steps, "Step cap (0: none)")->capture_default_str();
        c->add_option("--clip-norm", a.cfg.clip_norm, "Global gradient norm clip")->capture_default_str();
        c->add_option("--patience", a.cfg.patience, "Early stopping patience in epochs")->capture_default_str();
        c->add_option("--label-smoothing", a.cfg.label_smoothing, "Label smoothing")->capture_default_str();
        add_threads(c, a.cfg.threads);
    }

    GenerateArgs gen_args;
    auto* gen = app.add_subcommand("generate", "Generate receptor candidates for contexts");
    gen->add_option("--config", config_file, "TOML file of option values keyed by long flag name");
    {
        auto& a = gen_args;
        auto* c = gen;
        c->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required();
        c->add_option("--contexts", a.contexts, "Context TSV (mhc, peptide)")->required();
        c->add_option("--out", a.out, "Output candidate TSV")->required();
        c->add_option("--seed", a.cfg.seed, "Seed for the (T, b) draws")->required();
        c->add_option("--training", a.training, "Training TSV; its receptors are filtered out");
        c->add_option("--physchem", a.physchem, "Descriptor table file (default: built-in)");
        c->add_option("--n-starts", a.cfg.n_starts, "Beam searches per context")->capture_default_str();
        c->add_option("--t-min", a.cfg.t_min, "Lowest temperature")->capture_default_str();
        c->add_option("--t-max", a.cfg.t_max, "Highest temperature")->capture_default_str();
        c->add_option("--b-min", a.cfg.b_min, "Smallest beam width")->capture_default_str();
        c->add_option("--b-max", a.cfg.b_max, "Largest beam width")->capture_default_str();
        c->add_option("--len-min", a.cfg.len_min, "Shortest legal receptor")->capture_default_str();
        c->add_option("--len-max", a.cfg.len_max, "Longest legal receptor")->capture_default_str();
        c->add_option("--top-k", a.cfg.top_k, "Candidates kept per context")->capture_default_str();
        c->add_option("--select", a.mode, "Selection: unique or mmr")
            ->check(CLI::IsMember({"unique", "mmr"}))
            ->capture_default_str();
        c->add_option("--mmr-lambda", a.cfg.mmr_lambda, "MMR relevance weight")->capture_default_str();
        c->add_option("--pool", a.pool, "Pool: map (best path per start) or wide (all finished beams)")
            ->check(CLI::IsMember({"map", "wide"}))
            ->capture_default_str();
        c->add_option("--candidate-cap", a.cfg.candidate_cap, "Raw pool cap in wide mode")->capture_default_str();
        add_matrix(c, a.matrix, a.gap_open, a.gap_extend);
        add_threads(c, a.cfg.threads);
    }

    EvaluateArgs eval_args;
    auto* eval = app.add_subcommand("evaluate", "Score generated receptors against held-out ones");
    eval->add_option("--config", config_file, "TOML file of option values keyed by long flag name");
    {
        auto& a = eval_args;
        auto* c = eval;
        auto* pairs = c->add_option("--pairs", a.pairs, "TSV with actual and generated columns");
        auto* truth = c->add_option("--truth", a.truth, "Held-out triples TSV");
        auto* preds = c->add_option("--predictions", a.predictions, "Candidate TSV from generate or baseline ann");
        pairs->excludes(truth)->excludes(preds);
        truth->needs(preds);
        preds->needs(truth);
        c->add_option("--top", a.top, "Ranks per context paired with each truth row")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        c->add_option("--out", a.out, "Report JSON")->capture_default_str();
        c->add_option("--pairs-out", a.pairs_out, "Per-pair TSV (default: next to the report)");
        add_matrix(c, a.matrix, a.gap_open, a.gap_extend);
        add_threads(c, a.threads);
    }

    AnnArgs ann_args;
    auto* baseline = app.add_subcommand("baseline", "Baselines");
    baseline->require_subcommand(1);
    auto* ann = baseline->add_subcommand("ann", "Nearest-context retrieval baseline");
    ann->add_option("--config", config_file, "TOML file of option values keyed by long flag name");
    ann->add_option("--train", ann_args.train, "Training TSV to index")->required();
    ann->add_option("--contexts", ann_args.contexts, "Context TSV (mhc, peptide)")->required();
    ann->add_option("--out", ann_args.out, "Output candidate TSV")->required();
    add_matrix(ann, ann_args.matrix, ann_args.gap_open, ann_args.gap_extend);
    add_threads(ann, ann_args.threads);

    DumpArgs dump_args;
    auto* phys = app.add_subcommand("physchem", "Descriptor table tools");
    phys->require_subcommand(1);
    auto* dump = phys->add_subcommand("dump", "Print the descriptor table, its statistics and checksum");
    dump->add_option("--physchem", dump_args.physchem, "Descriptor table file (default: built-in)");
    dump->add_option("--out", dump_args.out, "Write the table here instead of stdout");

    try {
        const std::vector<std::string> merged = merge_config(args);
        std::vector<std::string> reversed(merged.rbegin(), merged.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
            app.exit(e, out, err);
            return kExitOk;
        }
        print_error(err, to_string(ErrorKind::Usage), kModule, e.what());
        return kExitUsage;
    } catch (const Error& e) {
        print_error(err, to_string(e.kind()), e.module(), e.detail());
        return kExitError;
    }
    if (eval->parsed() && eval_args.pairs.empty() && eval_args.truth.empty()) {
        print_error(err, to_string(ErrorKind::Usage), kModule, "evaluate needs --pairs or --truth with --predictions");
        return kExitUsage;
    }

    try {
        if (split->parsed()) {
            Manifest man("split", args);
            run_split(split_args, man, out);
        } else if (train_cmd->parsed()) {
            Manifest man("train", args);
            run_train(train_args, man, out);
        } else if (gen->parsed()) {
            Manifest man("generate", args);
            run_generate(gen_args, man, out);
        } else if (eval->parsed()) {
            Manifest man("evaluate", args);
            run_evaluate(eval_args, man, out);
        } else if (ann->parsed()) {
            Manifest man("baseline ann", args);
            run_ann(ann_args, man, out);
        } else if (dump->parsed()) {
            Manifest man("physchem dump", args);
            run_dump(dump_args, man, out);
        }
    } catch (const Error& e) {
        print_error(err, to_string(e.kind()), e.module(), e.detail());
        return e.kind() == ErrorKind::Usage ? kExitUsage : kExitError;
    } catch (const std::exception& e) {
        print_error(err, "InternalError", kModule, e.what());
        return kExitError;
    }
    return kExitOk;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace cdr3gen::cli
