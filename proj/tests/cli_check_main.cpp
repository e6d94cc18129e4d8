// Exit-code and help contract of the command-line tool.
// Usage: cli_check <path-to-futransunet>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <sys/wait.h>

namespace {

int failures = 0;

void check(bool ok, const std::string& what) {
    std::printf("[%s] %s\n", ok ? "ok" : "FAIL", what.c_str());
    if (!ok) ++failures;
}

int run(const std::string& cmd) {
    const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string capture(const std::string& cmd) {
    std::string out;
    FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
    if (!pipe) return out;
    std::array<char, 512> buf;
    while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
    pclose(pipe);
    return out;
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: cli_check <futransunet>\n");
        return 1;
    }
    const std::string cli = argv[1];

    check(run(cli + " --help") == 0, "--help exits 0");
    for (const char* sub : {"train", "predict", "gradcam", "stats", "synth"})
        check(run(cli + " " + sub + " --help") == 0, std::string(sub) + " --help exits 0");

    // help output states the documented defaults
    const std::string train_help = capture(cli + " train --help");
    check(train_help.find("50") != std::string::npos, "train help lists epoch default 50");
    check(train_help.find("16") != std::string::npos, "train help lists batch default 16");
    check(train_help.find("0.001") != std::string::npos, "train help lists lr default 0.001");
    const std::string predict_help = capture(cli + " predict --help");
    check(predict_help.find("0.5") != std::string::npos,
          "predict help lists threshold default 0.5");

    check(run(cli + " predict --weights w.futw") == 2, "missing required args exit 2");
    check(run(cli + " train --no-such-flag") == 2, "unknown flag exits 2");
    check(run(cli + " frobnicate") == 2, "unknown subcommand exits 2");
    check(run(cli) == 2, "missing subcommand exits 2");

    // runtime failures (not usage errors) exit 1 with a one-line diagnostic
    check(run(cli + " predict --weights /nonexistent.futw --input /none --out /tmp/x") == 1,
          "missing weights file exits 1");
    const std::string diag =
        capture(cli + " predict --weights /nonexistent.futw --input /none --out /tmp/x");
    check(diag.rfind("error:", 0) == 0, "runtime diagnostic is a single error line");

    if (failures) std::printf("%d CLI contract checks FAILED\n", failures);
    return failures == 0 ? 0 : 1;
}
