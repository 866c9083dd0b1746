#include "mtask/builder.hpp"
#include "mtask/bytecode.hpp"
#include "mtask/examples.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <regex>
#include <spawn.h>
#include <sys/wait.h>
#include <thread>

extern char** environ;

using namespace mtask;
using namespace mtask::dsl;
namespace fs = std::filesystem;
namespace asio = boost::asio;
namespace http = boost::beast::http;

namespace {

fs::path scratch()
{
    static fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("mtask_cli_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct Proc {
    pid_t pid = -1;
    fs::path log;

    std::string output() const { return slurp(log); }

    bool wait_for(const std::string& needle, std::chrono::milliseconds limit = std::chrono::milliseconds(10000)) const
    {
        auto end = std::chrono::steady_clock::now() + limit;
        while (std::chrono::steady_clock::now() < end) {
            if (output().find(needle) != std::string::npos) return true;
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        return false;
    }

    int wait()
    {
        int status = 0;
        ::waitpid(pid, &status, 0);
        pid = -1;
        return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    }

    void interrupt() { ::kill(pid, SIGINT); }
};

Proc spawn(const std::vector<std::string>& args, const std::vector<std::string>& env = {})
{
    static int counter = 0;
    Proc p;
    p.log = scratch() / ("run" + std::to_string(counter++) + ".log");
    std::vector<std::string> argv_s = {MTASK_CLI};
    argv_s.insert(argv_s.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_s) argv.push_back(a.data());
    argv.push_back(nullptr);

    std::vector<std::string> env_s;
    for (char** e = environ; *e; ++e)
        if (std::string(*e).rfind("TOPIOT_CONFIG=", 0) != 0) env_s.emplace_back(*e);
    env_s.insert(env_s.end(), env.begin(), env.end());
    std::vector<char*> envp;
    for (auto& e : env_s) envp.push_back(e.data());
    envp.push_back(nullptr);

    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_addopen(&fa, 1, p.log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&fa, 1, 2);
    int rc = posix_spawn(&p.pid, argv[0], &fa, nullptr, argv.data(), envp.data());
    posix_spawn_file_actions_destroy(&fa);
    if (rc != 0) throw std::runtime_error("spawn failed");
    return p;
}

struct Run {
    int code;
    std::string out;
};

Run run(const std::vector<std::string>& args, const std::vector<std::string>& env = {})
{
    auto p = spawn(args, env);
    int code = p.wait();
    return {code, p.output()};
}

std::uint16_t served_port(const Proc& p)
{
    if (!p.wait_for("serving on http://")) return 0;
    std::smatch m;
    std::string out = p.output();
    if (!std::regex_search(out, m, std::regex(R"(serving on http://[^:]+:(\d+))"))) return 0;
    return static_cast<std::uint16_t>(std::stoi(m[1]));
}

nlohmann::json get_json(std::uint16_t port, const std::string& target)
{
    asio::io_context io;
    boost::beast::tcp_stream stream(io);
    stream.connect(asio::ip::tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
    http::request<http::empty_body> req{http::verb::get, target, 11};
    req.set(http::field::host, "127.0.0.1");
    http::write(stream, req);
    boost::beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(stream, buf, res);
    return nlohmann::json::parse(res.body());
}

} // namespace

TEST(Cli, EmitCompileRoundTrip)
{
    auto mtp = scratch() / "blink.mtp";
    auto mtb = scratch() / "blink.mtb";
    ASSERT_EQ(run({"emit", "blink", "-o", mtp.string()}).code, 0);
    auto program = serialize(examples::blink());
    EXPECT_EQ(slurp(mtp), std::string(program.begin(), program.end()));

    auto c = run({"compile", mtp.string(), "--disasm"});
    ASSERT_EQ(c.code, 0) << c.out;
    EXPECT_NE(c.out.find("RPEAT"), std::string::npos);
    auto bytes = slurp(mtb);
    auto expected = encode(compile(examples::validated(examples::blink())));
    EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin(), bytes.end()), expected);
    EXPECT_EQ(encode(decode(expected)), expected);
}

TEST(Cli, PrettyPrint)
{
    auto mtp = scratch() / "blink_pp.mtp";
    ASSERT_EQ(run({"emit", "blink", "-o", mtp.string()}).code, 0);
    auto r = run({"pp", mtp.string()});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, pretty_print(examples::blink())[0] + "\n");

    ProgramBuilder b;
    auto small = scratch() / "small.mtp";
    spit(small, serialize(b.main([](Scope&) { return rtrn(lit(1)); })));
    r = run({"pp", small.string()});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "(rtrn 1)\n");

    EXPECT_EQ(run({"pp", (scratch() / "missing.mtp").string()}).code, 1);
}

TEST(Cli, CompileRejectsBadInput)
{
    ProgramBuilder b;
    auto bad = scratch() / "bad.mtp";
    spit(bad, serialize(b.main([](Scope&) { return rtrn(if_(lit(1), lit(1), lit(2))); })));
    auto r = run({"compile", bad.string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("type mismatch"), std::string::npos) << r.out;
    EXPECT_FALSE(fs::exists(scratch() / "bad.mtb"));

    auto junk = scratch() / "junk.mtp";
    spit(junk, {1, 2, 3});
    EXPECT_EQ(run({"compile", junk.string()}).code, 1);
    EXPECT_EQ(run({"emit", "nonsense"}).code, 1);
}

TEST(Cli, FlagErrors)
{
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"frobnicate"}).code, 1);
    EXPECT_EQ(run({"device", "--clock", "sundial"}).code, 1);
    EXPECT_EQ(run({"device", "--port", "70000"}).code, 1);
    EXPECT_EQ(run({"example", "nonsense"}).code, 1);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, DevicePortBusyAndOk)
{
    asio::io_context io;
    asio::ip::tcp::acceptor busy(io, asio::ip::tcp::endpoint(asio::ip::make_address("127.0.0.1"), 0));
    auto r = run({"device", "--port", std::to_string(busy.local_endpoint().port())});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("in use"), std::string::npos);

    auto p = spawn({"device", "--port", "0", "--clock", "virtual"});
    ASSERT_TRUE(p.wait_for("listening on"));
    p.interrupt();
    EXPECT_EQ(p.wait(), 0);
}

TEST(Cli, ServeConfig)
{
    auto bad = scratch() / "bad.ini";
    std::ofstream(bad) << "[server]\nport = many\n";
    EXPECT_EQ(run({"serve", "-c", bad.string()}).code, 1);
    EXPECT_EQ(run({"serve"}, {"TOPIOT_CONFIG=" + (scratch() / "absent.ini").string()}).code, 1);

    auto plain = spawn({"serve", "--port", "0"});
    auto port = served_port(plain);
    ASSERT_NE(port, 0) << plain.output();
    EXPECT_EQ(get_json(port, "/api/devices"), nlohmann::json::array());
    plain.interrupt();
    EXPECT_EQ(plain.wait(), 0);

    auto good = scratch() / "good.ini";
    std::ofstream(good) << "[server]\nport = 0\n\n[simulator]\nautostart = true\nclock = virtual\n";
    // the environment wins over the flag
    auto sim = spawn({"serve", "-c", bad.string()}, {"TOPIOT_CONFIG=" + good.string()});
    port = served_port(sim);
    ASSERT_NE(port, 0) << sim.output();
    EXPECT_EQ(get_json(port, "/api/devices").size(), 1u);
    sim.interrupt();
    EXPECT_EQ(sim.wait(), 0);
}

TEST(Cli, ExampleStopsCleanlyOnSigint)
{
    auto p = spawn({"--log-json", "example", "blink"});
    ASSERT_TRUE(p.wait_for("running as task"));
    ASSERT_TRUE(p.wait_for("D2 := 1"));
    p.interrupt();
    EXPECT_EQ(p.wait(), 0);
    auto out = p.output();
    EXPECT_NE(out.find("device: task 1 deleted"), std::string::npos) << out;
    std::istringstream lines(out);
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        auto j = nlohmann::json::parse(line, nullptr, false);
        EXPECT_FALSE(j.is_discarded()) << line;
        EXPECT_TRUE(j.contains("level") && j.contains("msg")) << line;
        ++n;
    }
    EXPECT_GT(n, 3);
}

TEST(Cli, PlotterExampleRuns)
{
    auto r = run({"example", "plotter", "--duration-ms", "400"});
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("plotter running"), std::string::npos);
    EXPECT_EQ(r.out.find("failed"), std::string::npos) << r.out;
}
