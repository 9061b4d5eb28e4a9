#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <sys/wait.h>

#include "rporag/io.hpp"
#include "rporag/pipeline.hpp"
#include "rporag/schema.hpp"

namespace fs = std::filesystem;
using namespace rporag;
using namespace rporag::pipeline;

namespace {

const fs::path kToy = fs::path(RPORAG_DATA_DIR) / "toy";
const fs::path kConfig = kToy / "toy.conf";
const fs::path kSchemas = fs::path(RPORAG_SOURCE_DIR) / "schemas";

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("rporag-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct Run {
    int status;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Run cli(const std::string& args, const fs::path& scratch) {
    auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
    std::string cmd = std::string(RPORAG_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

const char* kStages[] = {"sample", "retrieve", "type-train", "build-prefs", "build-prompts", "eval"};
const char* kOutputs[] = {kSampledFile, kRetrievalFile, kTypeModelFile, kPreferenceFile,
                          kTrainerConfigFile, kPromptFile, kSftFile, kReportFile};

void run_all(const fs::path& out, const fs::path& scratch, const std::string& extra = "") {
    for (const char* stage : kStages) {
        auto r = cli("-c " + kConfig.string() + " --out " + out.string() + " " + extra + " " + stage, scratch);
        ASSERT_EQ(r.status, 0) << stage << ": " << r.err;
    }
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST(Config, ParsesCommentsAndResolvesRelativePaths) {
    std::istringstream in("# comment\nkg.triples = t.tsv\nqa.file=/abs/qa.jsonl\n\nout.dir = out\nseed = 7\n");
    auto c = Config::parse(in, "x.conf", "/base");
    auto p = resolve(c);
    EXPECT_EQ(p.triples, fs::path("/base/t.tsv"));
    EXPECT_EQ(p.qa, fs::path("/abs/qa.jsonl"));
    EXPECT_EQ(p.seed, 7u);
    EXPECT_EQ(p.sampler.cluster.seed, 7u);
    EXPECT_EQ(p.embedder_seed, 7u);
    EXPECT_EQ(p.sampler.cluster.k_max, 10u);
    EXPECT_EQ(p.sampler.cluster.minibatch_cutoff, 1500u);
    EXPECT_EQ(p.beam.beam_init, 10u);
    EXPECT_DOUBLE_EQ(p.beam.gap_threshold, 0.3);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    auto parse = [](const std::string& extra) {
        std::istringstream in("kg.triples = t\nqa.file = q\nout.dir = o\n" + extra);
        return resolve(Config::parse(in));
    };
    EXPECT_THROW(parse("bogus.key = 1\n"), ConfigError);
    EXPECT_THROW(parse("seed = abc\n"), ConfigError);
    EXPECT_THROW(parse("retriever.beam_init = 0\n"), ConfigError);
    EXPECT_THROW(parse("pref.beta = -1\n"), ConfigError);
    EXPECT_THROW(parse("embedder.kind = remote\n"), ConfigError);
    EXPECT_THROW(parse("retriever.type_filter = maybe\n"), ConfigError);
    EXPECT_NO_THROW(parse("retriever.gap_threshold = inf\n"));
    std::istringstream missing("kg.triples = t\n");
    EXPECT_THROW(resolve(Config::parse(missing)), ConfigError);
    std::istringstream no_eq("just words\n");
    EXPECT_THROW(Config::parse(no_eq), ConfigError);
}

TEST(ParallelFor, VisitsEveryIndexAndRethrows) {
    std::vector<int> hits(100, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
    EXPECT_THROW(parallel_for(50, 3,
                              [](std::size_t i) {
                                  if (i == 17) throw DomainError("boom");
                              }),
                 DomainError);
}

TEST(Io, AtomicWriteLeavesNoTempOnSuccess) {
    TempDir dir("io");
    write_atomically(dir.path / "a.txt", [](std::ostream& o) { o << "x"; });
    EXPECT_EQ(slurp(dir.path / "a.txt"), "x");
    EXPECT_FALSE(fs::exists(dir.path / ".a.txt.tmp"));
    EXPECT_THROW(write_atomically(dir.path / "missing" / "b.txt", [](std::ostream& o) { o << "x"; }), WriteError);
}

TEST(Cli, FullPipelineProducesSchemaValidOutputs) {
    TempDir dir("e2e");
    auto out = dir.path / "out";
    run_all(out, dir.path);
    for (const char* name : kOutputs) EXPECT_TRUE(fs::is_regular_file(out / name)) << name;

    auto check_jsonl = [&](const char* file, const char* schema) {
        SchemaValidator v(nlohmann::json::parse(slurp(kSchemas / schema)));
        auto records = read_jsonl(out / file);
        EXPECT_FALSE(records.empty()) << file;
        for (const auto& r : records) {
            auto errors = v.validate(r);
            EXPECT_TRUE(errors.empty()) << file << ": " << (errors.empty() ? "" : errors.front());
        }
        return records.size();
    };
    EXPECT_EQ(check_jsonl(kSampledFile, "sampled.schema.json"), 10u);
    EXPECT_EQ(check_jsonl(kRetrievalFile, "retrieval.schema.json"), 10u);
    check_jsonl(kPreferenceFile, "preference.schema.json");
    EXPECT_EQ(check_jsonl(kPromptFile, "prompt.schema.json"), 10u);
    EXPECT_EQ(check_jsonl(kSftFile, "sft.schema.json"), 10u);
    SchemaValidator tc(nlohmann::json::parse(slurp(kSchemas / "trainer_config.schema.json")));
    EXPECT_TRUE(tc.valid(nlohmann::json::parse(slurp(out / kTrainerConfigFile))));
    SchemaValidator er(nlohmann::json::parse(slurp(kSchemas / "eval_report.schema.json")));
    EXPECT_TRUE(er.valid(nlohmann::json::parse(slurp(out / kReportFile))));
    for (const auto& entry : fs::directory_iterator(out))
        EXPECT_NE(entry.path().filename().string().front(), '.') << "leftover temp file " << entry.path();
}

TEST(Cli, RerunIsByteIdenticalAndWorkerCountInvariant) {
    TempDir dir("rerun");
    run_all(dir.path / "a", dir.path, "--seed 42");
    run_all(dir.path / "b", dir.path, "--seed 42");
    run_all(dir.path / "c", dir.path, "--seed 42 --workers 3");
    for (const char* name : kOutputs) {
        auto a = slurp(dir.path / "a" / name);
        EXPECT_EQ(a, slurp(dir.path / "b" / name)) << name;
        EXPECT_EQ(a, slurp(dir.path / "c" / name)) << name;
    }
}

TEST(Cli, SampleSummaryCountsRecords) {
    TempDir dir("sample");
    auto r = cli("-c " + kConfig.string() + " --out " + (dir.path / "o").string() + " sample", dir.path);
    ASSERT_EQ(r.status, 0) << r.err;
    auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["records"], 10);
    EXPECT_EQ(j["unreachable"], 0);
}

TEST(Cli, UnreachablePairIsCounted) {
    TempDir dir("unreach");
    write(dir.path / "qa.jsonl",
          slurp(kToy / "qa.jsonl") +
              R"({"id": "bad", "question": "q", "topic_entities": ["Thai language"], "answers": ["Shutter"]})" "\n");
    auto r = cli("-c " + kConfig.string() + " --out " + (dir.path / "o").string() + " --set qa.file=" +
                     (dir.path / "qa.jsonl").string() + " sample",
                 dir.path);
    ASSERT_EQ(r.status, 0) << r.err;
    auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["unreachable"], 1);
    EXPECT_EQ(j["records"], 10);
}

TEST(Cli, MissingGraphFailsWithoutOutputs) {
    TempDir dir("missing");
    auto out = dir.path / "o";
    auto r = cli("-c " + kConfig.string() + " --out " + out.string() + " --set kg.triples=" +
                     (dir.path / "nope.tsv").string() + " sample",
                 dir.path);
    EXPECT_NE(r.status, 0);
    EXPECT_FALSE(fs::exists(out / kSampledFile));
    EXPECT_TRUE(!fs::exists(out) || fs::is_empty(out));
}

TEST(Cli, EvalWithoutRetrievalNamesRetrieve) {
    TempDir dir("dep");
    auto r = cli("-c " + kConfig.string() + " --out " + (dir.path / "o").string() + " eval", dir.path);
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.err.find("retrieve"), std::string::npos) << r.err;
}

TEST(Cli, UsageAndConfigErrorsExitOne) {
    TempDir dir("usage");
    EXPECT_EQ(cli("-c " + kConfig.string(), dir.path).status, 1);
    EXPECT_EQ(cli("-c " + kConfig.string() + " frobnicate", dir.path).status, 1);
    EXPECT_EQ(cli("-c " + kConfig.string() + " --set nope=1 sample", dir.path).status, 1);
    EXPECT_EQ(cli("-c " + (dir.path / "absent.conf").string() + " sample", dir.path).status, 1);
}
