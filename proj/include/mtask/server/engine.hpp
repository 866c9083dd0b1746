#pragma once

// Server-side task engine. Tasks are recipes; spawning one instantiates a
// tree of rewritable nodes. Events (SDS writes, editor input, actions,
// device messages) are queued and processed one per tick; a tick rewrites
// only the nodes subscribed to the event's source, plus their ancestors.

#include "mtask/lang.hpp"
#include "mtask/server/schema.hpp"
#include "mtask/wire.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace mtask::server {

class Engine;
class Node;

using NodeId = std::uint64_t;

class UnknownKey : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class UnknownPath : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class UnknownDevice : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// an action that exists but whose guard rejects the current value
class ActionDisabled : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class Task {
public:
    using Factory = std::function<std::unique_ptr<Node>()>;

    explicit Task(Factory make) : make_(std::make_shared<const Factory>(std::move(make))) {}
    std::unique_ptr<Node> instantiate() const;

private:
    std::shared_ptr<const Factory> make_;
};

struct SdsRef {
    std::string key;
};

struct DeviceRef {
    int id = 0;
};

// ---- step continuations

using Guard = std::function<std::optional<Task>(const Value&)>;
using Then = std::function<Task(const Json&)>;

struct TaskCont {
    enum class Kind { OnValue, OnAction };
    Kind kind = Kind::OnValue;
    std::string action;
    Guard guard;
};

TaskCont on_value(Guard g);
TaskCont on_action(std::string action, Guard g);

Guard always(Task t);
Guard never(Task t);
Guard has_value(Then f);
Guard if_stable(Then f);
Guard if_unstable(Then f);
Guard if_value(std::function<bool(const Json&)> pred, Then f);
Guard if_cond(bool c, Task t);
Guard without_value(std::optional<Task> t);
Guard with_value(std::function<std::optional<Task>(const Json&)> f);
Guard with_stable(std::function<std::optional<Task>(const Json&)> f);
Guard with_unstable(std::function<std::optional<Task>(const Json&)> f);

// ---- editors

// lens between the stored value and what the editor shows
struct ViewAs {
    std::function<Json(const Json&)> to;
    std::optional<Schema> shown;
};

struct UpdateAs {
    std::function<Json(const Json&)> to;
    std::function<Json(const Json& old, const Json& shown)> back;
    std::optional<Schema> shown;
};

Task enter(std::string prompt, Schema schema, std::function<Json(const Json&)> enter_as = {});
Task update(std::string prompt, Schema schema, Json initial, UpdateAs lens = {});
Task view(std::string prompt, Json v, ViewAs lens = {});
Task update_shared(std::string prompt, SdsRef sds, UpdateAs lens = {});
Task view_shared(std::string prompt, SdsRef sds, ViewAs lens = {});

// ---- basic tasks and combinators

Task ret(Json v);
Task fail(std::string reason);

Task step(Task t, std::vector<TaskCont> conts);       // >>*
Task bind(Task t, Then f);                            // >>=
Task bind_stable(Task t, Then f);                     // >>-
Task bind_value(Task t, Then f);                      // >>~
Task then(Task t, Task u);                            // >>|
Task map_value(Task t, std::function<Json(const Json&)> f);  // @
Task const_value(Task t, Json v);                     // @!

Task par_and(Task l, Task r);    // -&&-
Task par_or(Task l, Task r);     // -||-
Task par_left(Task l, Task r);   // -||
Task par_right(Task l, Task r);  // ||-

Task forever(Task t);
Task sequence(std::vector<Task> ts);

// >&>: the right-hand side sees the left value as a read-only SDS holding
// [] while the left has no value and [v] otherwise
Task feed(Task t, std::function<Task(SdsRef)> f);
// >^*: a firing continuation is forked next to t instead of replacing it;
// it stays disabled until its fork becomes stable and is removed
Task sidestep(Task t, std::vector<TaskCont> conts);

Task maybe_cancel(std::string panic, Task t);

// ---- shared data

Task with_shared(Json init, std::function<Task(SdsRef)> body, std::optional<Schema> schema = {});
Task get(SdsRef sds);
Task set(SdsRef sds, Json v);
Task upd(SdsRef sds, std::function<Json(const Json&)> f);
Task watch(SdsRef sds);

// ---- devices

struct ConnectSpec {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
};

// runs the body against a registered device; when the body stabilizes or is
// stopped every task it shipped is deleted from the device
Task with_device(DeviceRef dev, std::function<Task(DeviceRef)> body);
// connects first (through the engine's connector) and closes the session
// again when done
Task with_device(ConnectSpec where, std::function<Task(DeviceRef)> body);

// Ships the program and mirrors the device task's value. Lifted SDSs are
// bound by key: `bindings` maps the program's key to a server SDS, and keys
// missing there bind to the server SDS of the same name.
Task lift_mtask(Program p, DeviceRef dev, std::map<std::string, SdsRef> bindings = {});
Task view_device(DeviceRef dev);

// ---- engine

class DeviceLink {
public:
    virtual ~DeviceLink() = default;
    virtual void send(const wire::Message& m) = 0;
    virtual void close() = 0;
    // called once the engine has assigned the device id
    virtual void attached(int) {}
};

struct SdsWrite {
    std::string key;
    Json value;
};
struct EditorInput {
    std::string path;
    Json value;
};
struct ActionInput {
    std::string path;
    std::string action;
};
struct DeviceMessage {
    int device = 0;
    wire::Message message;
};
struct DeviceClosed {
    int device = 0;
    std::string reason;
};
// peripheral state reported by a simulator (matrix frame, pins)
struct DeviceState {
    int device = 0;
    Json state;
};
struct ConnectResult {
    std::uint64_t request = 0;
    std::unique_ptr<DeviceLink> link;  // null on failure
    wire::DeviceSpec spec;
    std::string error_kind;
    std::string error;
};

using Event = std::variant<SdsWrite, EditorInput, ActionInput, DeviceMessage, DeviceClosed, DeviceState, std::shared_ptr<ConnectResult>>;

struct DeviceInfo {
    int id = 0;
    std::string name;
    wire::DeviceSpec spec;
    bool connected = false;
    std::size_t live_tasks = 0;
};

class Engine {
public:
    Engine();
    ~Engine();

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    // ---- shared data, immediate access
    SdsRef shared_store(const std::string& key, Json init, std::optional<Schema> schema = {});
    bool has_sds(const std::string& key) const;
    Json sds_get(const std::string& key) const;
    // atomic write; subscribers are marked and rewritten by the next tick
    Json sds_set(const std::string& key, Json v);
    Json sds_upd(const std::string& key, const std::function<Json(const Json&)>& f);
    std::uint64_t sds_writes(const std::string& key) const;
    std::size_t sds_subscribers(const std::string& key) const;
    Json sds_all() const;

    // ---- task forest
    int spawn(Task t, std::string name = "");
    void remove(int top);
    std::vector<int> tops() const;
    Value value(int top) const;
    std::optional<std::string> error(int top) const;
    Json forest() const;

    // node at a path such as "/0/left/body"
    const Node* find(const std::string& path) const;
    Value value_at(const std::string& path) const;
    std::uint64_t rewrites_at(const std::string& path) const;
    std::uint64_t notifications_at(const std::string& path) const;
    std::vector<DynTaskValue> proxy_trace(const std::string& path) const;

    // ---- devices
    int add_device(std::unique_ptr<DeviceLink> link, wire::DeviceSpec spec, std::string name = "");
    // DelTask for every live task, then the link is closed
    void end_session(int device);
    std::vector<DeviceInfo> devices() const;
    Json devices_json() const;
    bool device_connected(int device) const;

    using Connector = std::function<void(std::uint64_t request, const ConnectSpec&)>;
    // Called for address based with_device; the host answers by submitting
    // a ConnectResult with the same request id.
    void set_connector(Connector c) { connector_ = std::move(c); }

    // ---- events
    void submit(Event e);
    // Processes one queued event. Returns false when the queue was empty.
    bool tick();
    // Processes until the queue is empty; returns the number of ticks.
    std::size_t run(std::size_t max_ticks = 1'000'000);
    std::size_t pending() const { return queue_.size(); }
    std::uint64_t ticks() const { return ticks_; }

    // Validates and applies UI input right away (one tick each). Throw
    // UnknownPath, SchemaViolation, ActionDisabled or UnknownKey.
    void edit(const std::string& path, const Json& value);
    void action(const std::string& path, const std::string& action);
    void write(const std::string& key, const Json& value);

    // Changes since the previous call: {"tick", "taskValues", "removed",
    // "sdsValues", "devices", "matrixFrame", "pinStates"}.
    Json take_delta();
    // everything, in delta form
    Json full_state() const;

    // ---- used by nodes
    NodeId register_node(Node* n);
    void unregister_node(Node* n);
    Node* node(NodeId id) const;
    void mark(Node* n);
    void subscribe(const std::string& key, NodeId id);
    void unsubscribe(const std::string& key, NodeId id);
    // origin is excluded from notification (a proxy relaying a device write)
    void write_sds(const std::string& key, Json v, NodeId origin = 0);
    std::string fresh_sds(Json init, std::optional<Schema> schema, bool read_only = false);
    void drop_sds(const std::string& key);
    bool sds_read_only(const std::string& key) const;

    struct Session;
    Session* session(int device);
    std::uint16_t ship(int device, NodeId proxy, const std::vector<std::uint8_t>& image);
    void send(int device, const wire::Message& m);
    void forget_task(int device, std::uint16_t task);
    std::uint64_t request_connection(const ConnectSpec& where, NodeId waiter);

private:
    struct Sds {
        Json value;
        std::optional<Schema> schema;
        std::set<NodeId> subscribers;
        std::uint64_t writes = 0;
        bool read_only = false;
        bool changed = true;
        bool anonymous = false;
    };

    struct Top {
        int id = 0;
        std::string name;
        std::unique_ptr<Node> root;
        Value published;
        bool failed = false;
    };

    Sds& sds_ref(const std::string& key);
    const Sds& sds_ref(const std::string& key) const;
    void settle();
    void commit();
    void sync_device_sds();
    void handle(const Event& e);
    void handle_device(int device, const wire::Message& m);
    Node* find_mut(const std::string& path) const;
    void collect_delta(const Node& n, Json& values) const;

    std::map<std::string, Sds> sds_;
    std::map<int, Top> tops_;
    int next_top_ = 0;
    std::unordered_map<NodeId, Node*> nodes_;
    std::map<std::string, Node*> paths_;
    NodeId next_node_ = 1;
    std::map<int, std::unique_ptr<Session>> sessions_;
    int next_device_ = 0;
    std::deque<Event> queue_;
    std::uint64_t ticks_ = 0;
    std::uint64_t anon_ = 0;
    Connector connector_;
    std::uint64_t next_request_ = 1;
    std::map<std::uint64_t, NodeId> waiting_;
    std::set<std::string> removed_paths_;
    std::map<int, Json> device_state_;
    std::set<int> device_state_changed_;
    bool devices_changed_ = true;
};

} // namespace mtask::server
