#pragma once

#include "mtask/server/engine.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

namespace mtask::server {

class TaskFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One node of an instantiated task tree.
class Node {
public:
    explicit Node(std::string kind) : kind_(std::move(kind)) {}
    virtual ~Node() = default;

    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    const std::string& kind() const { return kind_; }
    const std::string& path() const { return path_; }
    NodeId id() const { return id_; }
    Node* parent() const { return parent_; }
    const Value& value() const { return value_; }
    const std::optional<std::string>& error() const { return error_; }
    std::uint64_t rewrites() const { return rewrites_; }
    std::uint64_t notifications() const { return notifications_; }
    bool dirty() const { return dirty_; }

    void attach(Engine& eng, Node* parent, std::string path);
    // Starts the node on first use, re-evaluates it when dirty and returns
    // the cached value otherwise. Throws TaskFailure once the node failed.
    Value rewrite(Engine& eng);
    void stop(Engine& eng);

    virtual void notify(Engine& eng, const std::string& key);
    virtual void on_device(Engine&, const wire::Message&) {}
    virtual void on_device_lost(Engine&, const std::string&) {}
    virtual void on_connected(Engine&, ConnectResult&) {}
    virtual void on_edit(Engine& eng, const Json& v);
    virtual void on_action(Engine& eng, const std::string& action);

    virtual void describe(Json&) const {}
    virtual void each_child(const std::function<void(Node&)>&) const {}

    Value published;

protected:
    virtual void start(Engine&) {}
    virtual Value eval(Engine& eng) = 0;
    virtual void on_stop(Engine&) {}

    std::unique_ptr<Node> adopt(Engine& eng, const Task& t, const std::string& role);
    static void drop(Engine& eng, std::unique_ptr<Node>& n);

private:
    friend class Engine;

    std::string kind_;
    std::string path_;
    NodeId id_ = 0;
    Node* parent_ = nullptr;
    Value value_;
    std::optional<std::string> error_;
    bool started_ = false;
    bool stopped_ = false;
    bool dirty_ = false;
    std::uint64_t rewrites_ = 0;
    std::uint64_t notifications_ = 0;
};

struct Engine::Session {
    int id = 0;
    std::string name;
    wire::DeviceSpec spec;
    std::unique_ptr<DeviceLink> link;
    bool connected = true;
    std::uint16_t next_task = 1;
    std::map<std::uint16_t, NodeId> tasks;
    std::map<wire::Tag, std::uint64_t> sent;
};

} // namespace mtask::server
