#include "dido/external_problem.hpp"

#include "dido/io.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <mutex>
#include <signal.h>
#include <sstream>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>
#include <unordered_map>

namespace dido {

namespace fs = std::filesystem;

struct SimulatorResult {
    bool feasible = false;
    std::optional<double> objective;
};

class ExternalSimulator {
public:
    explicit ExternalSimulator(ExternalCommandConfig config) : config_(std::move(config)) {
        if (config_.command_template.empty()) {
            throw ConfigError("external problem needs a command template");
        }
        if (config_.dimension < 1) {
            throw ConfigError("external problem needs a positive dimension");
        }
        if (config_.max_concurrency < 1 || config_.retries < 0 || !(config_.timeout_seconds > 0)) {
            throw ConfigError("external problem: invalid concurrency, retry or timeout setting");
        }
        if (config_.workdir.empty()) {
            config_.workdir = fs::temp_directory_path() / "dido-external";
        }
        fs::create_directories(config_.workdir);
    }

    SimulatorResult query(const Vector& x) {
        const std::string key(reinterpret_cast<const char*>(x.data()),
                              static_cast<std::size_t>(x.size()) * sizeof(double));
        {
            std::lock_guard lock(cache_mutex_);
            if (auto it = cache_.find(key); it != cache_.end()) {
                ++stats_.cache_hits;
                return it->second;
            }
        }
        SimulatorResult result = invoke_with_retries(x);
        std::lock_guard lock(cache_mutex_);
        cache_.emplace(key, result);
        return result;
    }

    ExternalCommandStats stats() const {
        std::lock_guard lock(cache_mutex_);
        return stats_;
    }

    const ExternalCommandConfig& config() const { return config_; }

private:
    SimulatorResult invoke_with_retries(const Vector& x) {
        for (int attempt = 0;; ++attempt) {
            try {
                return invoke(x);
            } catch (const ExternalCommandError& e) {
                if (attempt >= config_.retries) {
                    throw;
                }
                spdlog::warn("external command failed (attempt {}/{}): {}", attempt + 1,
                             config_.retries + 1, e.what());
            }
        }
    }

    SimulatorResult invoke(const Vector& x) {
        std::unique_lock slot(slot_mutex_);
        slot_cv_.wait(slot, [&] { return active_ < config_.max_concurrency; });
        ++active_;
        slot.unlock();
        struct Release {
            ExternalSimulator* self;
            ~Release() {
                {
                    std::lock_guard l(self->slot_mutex_);
                    --self->active_;
                }
                self->slot_cv_.notify_one();
            }
        } release{this};

        {
            std::lock_guard lock(cache_mutex_);
            ++stats_.invocations;
        }
        // unique across simulators and processes sharing a workdir
        static std::atomic<std::uint64_t> next_file{0};
        const std::string stem = "query_" + std::to_string(::getpid()) + "_" + std::to_string(++next_file);
        const fs::path input = config_.workdir / (stem + ".in");
        const fs::path output = config_.workdir / (stem + ".out");
        const fs::path log = config_.workdir / (stem + ".log");
        {
            std::ofstream in(input, std::ios::trunc);
            in << x.size() << "\n";
            for (Eigen::Index j = 0; j < x.size(); ++j) {
                in << (j ? " " : "") << io::format_double(x[j]);
            }
            in << "\n";
            if (!in) {
                throw ExternalCommandError("cannot write simulator input " + input.string(), -1, "");
            }
        }
        std::error_code ec;
        fs::remove(output, ec);

        const std::string command = substitute(input, output);
        const int status = run_command(command, log);
        const std::string captured = slurp(log);
        if (status != 0) {
            std::ostringstream msg;
            if (status == kTimedOut) {
                msg << "external command timed out after " << config_.timeout_seconds << " s";
            } else {
                msg << "external command exited with status " << status;
            }
            msg << ": " << command;
            throw ExternalCommandError(msg.str(), status == kTimedOut ? -1 : status, captured);
        }
        SimulatorResult result = parse_output(output, captured);
        fs::remove(input, ec);
        fs::remove(output, ec);
        fs::remove(log, ec);
        return result;
    }

    std::string substitute(const fs::path& input, const fs::path& output) const {
        std::string cmd = config_.command_template;
        auto replace_all = [&cmd](const std::string& from, const std::string& to) {
            for (std::size_t pos = cmd.find(from); pos != std::string::npos;
                 pos = cmd.find(from, pos + to.size())) {
                cmd.replace(pos, from.size(), to);
            }
        };
        replace_all("{input}", input.string());
        replace_all("{output}", output.string());
        replace_all("{dim}", std::to_string(config_.dimension));
        return cmd;
    }

    static constexpr int kTimedOut = -2;

    int run_command(const std::string& command, const fs::path& log) const {
        const pid_t pid = fork();
        if (pid < 0) {
            throw ExternalCommandError(std::string("fork failed: ") + std::strerror(errno), -1, "");
        }
        if (pid == 0) {
            setpgid(0, 0);
            const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
            if (fd >= 0) {
                dup2(fd, STDOUT_FILENO);
                dup2(fd, STDERR_FILENO);
                ::close(fd);
            }
            execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        const auto deadline = std::chrono::steady_clock::now() +
                              std::chrono::duration<double>(config_.timeout_seconds);
        int status = 0;
        while (true) {
            const pid_t r = waitpid(pid, &status, WNOHANG);
            if (r == pid) {
                break;
            }
            if (r < 0 && errno != EINTR) {
                throw ExternalCommandError(std::string("waitpid failed: ") + std::strerror(errno),
                                           -1, "");
            }
            if (std::chrono::steady_clock::now() > deadline) {
                kill(-pid, SIGKILL);
                kill(pid, SIGKILL);
                waitpid(pid, &status, 0);
                return kTimedOut;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
        if (WIFEXITED(status)) {
            return WEXITSTATUS(status);
        }
        return WIFSIGNALED(status) ? 128 + WTERMSIG(status) : 1;
    }

    static std::string slurp(const fs::path& path) {
        std::ifstream in(path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }

    static SimulatorResult parse_output(const fs::path& path, const std::string& captured) {
        std::ifstream in(path);
        if (!in) {
            throw ExternalCommandError("external command wrote no output file " + path.string(), 0,
                                       captured);
        }
        auto malformed = [&](const std::string& why) {
            return ExternalCommandError("malformed simulator output " + path.string() + ": " + why,
                                        0, captured);
        };
        SimulatorResult r;
        std::string line;
        if (!std::getline(in, line)) {
            throw malformed("empty file");
        }
        {
            std::istringstream ls(line);
            std::string tag;
            int flag = -1;
            std::string trailing;
            if (!(ls >> tag >> flag) || tag != "feasible" || (flag != 0 && flag != 1) ||
                (ls >> trailing)) {
                throw malformed("line 1 must be 'feasible 0|1'");
            }
            r.feasible = flag == 1;
        }
        if (std::getline(in, line) && !line.empty()) {
            std::istringstream ls(line);
            std::string tag;
            std::string value;
            if (!(ls >> tag >> value) || tag != "objective") {
                throw malformed("line 2 must be 'objective <decimal>'");
            }
            char* end = nullptr;
            const double v = std::strtod(value.c_str(), &end);
            if (end == value.c_str() || *end != '\0') {
                throw malformed("cannot parse objective '" + value + "'");
            }
            r.objective = v;
        }
        return r;
    }

    ExternalCommandConfig config_;
    mutable std::mutex cache_mutex_;
    std::unordered_map<std::string, SimulatorResult> cache_;
    ExternalCommandStats stats_;
    std::mutex slot_mutex_;
    std::condition_variable slot_cv_;
    int active_ = 0;
};

ExternalCommandStats ExternalProblem::stats() const { return simulator->stats(); }

ExternalProblem external_problem_from_command(const ExternalCommandConfig& config) {
    auto sim = std::make_shared<ExternalSimulator>(config);
    auto feasible = [sim](const Vector& x) { return sim->query(x).feasible; };
    auto objective = [sim](const Vector& x) {
        const SimulatorResult r = sim->query(x);
        if (!r.feasible) {
            throw OracleError("objective requested for a point the simulator reports infeasible");
        }
        if (!r.objective) {
            throw OracleError("simulator output has no objective line for a feasible point");
        }
        return *r.objective;
    };
    DataInformedProblem problem("external", config.dimension, feasible, objective,
                                config.suggested_box);
    return ExternalProblem{std::move(problem), std::move(sim)};
}

}  // namespace dido
