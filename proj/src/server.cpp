#include "blimp/server.hpp"

#include <atomic>
#include <deque>
#include <map>
#include <mutex>
#include <system_error>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <fmt/format.h>

namespace blimp {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace ws = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

// A client that stops reading is disconnected once this many messages queue up.
constexpr std::size_t kMaxQueued = 8192;

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

struct Server::Impl {
    struct Connection {
        virtual ~Connection() = default;
        virtual void send(const Message& m) = 0;
        virtual void close() = 0;
    };

    asio::io_context io;
    tcp::acceptor frame_acceptor{io};
    tcp::acceptor console_acceptor{io};
    std::thread thread;
    std::atomic<bool> running{false};

    std::mutex inbox_mutex;
    std::vector<InboundEvent> inbox;

    // Touched only on the I/O thread.
    std::map<SessionId, std::shared_ptr<Connection>> connections;
    SessionId next_id = kFirstSessionId;

    void push(InboundEvent ev) {
        std::lock_guard lock(inbox_mutex);
        inbox.push_back(std::move(ev));
    }

    void forget(SessionId id) {
        if (connections.erase(id)) push({id, inbound::Closed{}});
    }

    // ---- binary frames over TCP ------------------------------------------------

    struct FrameConnection : Connection, std::enable_shared_from_this<FrameConnection> {
        Impl& server;
        SessionId id;
        tcp::socket socket;
        std::array<std::uint8_t, 4096> buf{};
        proto::FrameReader reader;
        std::deque<std::vector<std::uint8_t>> queue;
        bool closed = false;

        FrameConnection(Impl& s, SessionId i, tcp::socket sock) : server(s), id(i), socket(std::move(sock)) {}

        void start() {
            socket.set_option(tcp::no_delay(true));
            read();
        }

        void read() {
            socket.async_read_some(asio::buffer(buf), [self = shared_from_this()](beast::error_code ec, std::size_t n) {
                if (ec) return self->close();
                self->reader.feed(std::span(self->buf.data(), n));
                while (auto r = self->reader.next()) self->server.push({self->id, inbound::FrameIn{std::move(*r)}});
                self->read();
            });
        }

        void send(const Message& m) override {
            const auto* frame = std::get_if<proto::Frame>(&m);
            if (!frame || closed) return;
            if (queue.size() >= kMaxQueued) return close();
            queue.push_back(proto::encode_frame(*frame));
            if (queue.size() == 1) write();
        }

        void write() {
            asio::async_write(socket, asio::buffer(queue.front()),
                              [self = shared_from_this()](beast::error_code ec, std::size_t) {
                                  if (ec) return self->close();
                                  self->queue.pop_front();
                                  if (!self->queue.empty()) self->write();
                              });
        }

        void close() override {
            if (closed) return;
            closed = true;
            beast::error_code ignored;
            socket.shutdown(tcp::socket::shutdown_both, ignored);
            socket.close(ignored);
            server.forget(id);
        }
    };

    // ---- JSON over WebSocket ---------------------------------------------------

    struct ConsoleConnection : Connection, std::enable_shared_from_this<ConsoleConnection> {
        Impl& server;
        SessionId id;
        ws::stream<beast::tcp_stream> stream;
        beast::flat_buffer buffer;
        std::deque<std::string> queue;
        bool open = false;
        bool closed = false;

        ConsoleConnection(Impl& s, SessionId i, tcp::socket sock) : server(s), id(i), stream(std::move(sock)) {}

        void start() {
            stream.set_option(ws::stream_base::timeout::suggested(beast::role_type::server));
            stream.async_accept([self = shared_from_this()](beast::error_code ec) {
                if (ec) {
                    self->closed = true;
                    self->server.connections.erase(self->id);
                    return;
                }
                self->open = true;
                self->stream.text(true);
                self->server.push({self->id, inbound::Opened{Transport::console}});
                self->read();
            });
        }

        void read() {
            stream.async_read(buffer, [self = shared_from_this()](beast::error_code ec, std::size_t) {
                if (ec) return self->close();
                self->server.push({self->id, inbound::TextIn{beast::buffers_to_string(self->buffer.data())}});
                self->buffer.consume(self->buffer.size());
                self->read();
            });
        }

        void send(const Message& m) override {
            const auto* doc = std::get_if<nlohmann::json>(&m);
            if (!doc || closed || !open) return;
            if (queue.size() >= kMaxQueued) return close();
            queue.push_back(doc->dump());
            if (queue.size() == 1) write();
        }

        void write() {
            stream.async_write(asio::buffer(queue.front()),
                               [self = shared_from_this()](beast::error_code ec, std::size_t) {
                                   if (ec) return self->close();
                                   self->queue.pop_front();
                                   if (!self->queue.empty()) self->write();
                               });
        }

        void close() override {
            if (closed) return;
            closed = true;
            beast::error_code ignored;
            beast::get_lowest_layer(stream).socket().shutdown(tcp::socket::shutdown_both, ignored);
            beast::get_lowest_layer(stream).close();
            if (open) {
                server.forget(id);
            } else {
                server.connections.erase(id);
            }
        }
    };

    void listen(tcp::acceptor& acceptor, const std::string& address, std::uint16_t port) {
        beast::error_code ec;
        const auto ip = asio::ip::make_address(address, ec);
        if (ec) throw std::system_error(ec, fmt::format("address '{}'", address));
        const tcp::endpoint ep(ip, port);
        acceptor.open(ep.protocol(), ec);
        if (!ec) acceptor.set_option(tcp::acceptor::reuse_address(true), ec);
        if (!ec) acceptor.bind(ep, ec);
        if (!ec) acceptor.listen(asio::socket_base::max_listen_connections, ec);
        if (ec) throw std::system_error(ec, fmt::format("port {}", port));
    }

    void accept_frames() {
        frame_acceptor.async_accept([this](beast::error_code ec, tcp::socket sock) {
            if (ec) return;
            const SessionId id = next_id++;
            auto conn = std::make_shared<FrameConnection>(*this, id, std::move(sock));
            connections[id] = conn;
            push({id, inbound::Opened{Transport::frames}});
            conn->start();
            accept_frames();
        });
    }

    void accept_console() {
        console_acceptor.async_accept([this](beast::error_code ec, tcp::socket sock) {
            if (ec) return;
            const SessionId id = next_id++;
            auto conn = std::make_shared<ConsoleConnection>(*this, id, std::move(sock));
            connections[id] = conn;
            conn->start();
            accept_console();
        });
    }
};

Server::Server(const Ports& ports) : impl_(std::make_unique<Impl>()) {
    impl_->listen(impl_->frame_acceptor, ports.address, ports.frames);
    impl_->listen(impl_->console_acceptor, ports.address, ports.console);
}

Server::~Server() { stop(); }

std::uint16_t Server::frame_port() const { return impl_->frame_acceptor.local_endpoint().port(); }
std::uint16_t Server::console_port() const { return impl_->console_acceptor.local_endpoint().port(); }

void Server::start() {
    if (impl_->running.exchange(true)) return;
    impl_->accept_frames();
    impl_->accept_console();
    impl_->thread = std::thread([this] { impl_->io.run(); });
}

void Server::stop() {
    if (!impl_->running.exchange(false)) return;
    asio::post(impl_->io, [impl = impl_.get()] {
        beast::error_code ignored;
        impl->frame_acceptor.close(ignored);
        impl->console_acceptor.close(ignored);
        auto conns = impl->connections;
        for (auto& [id, c] : conns) c->close();
    });
    // Give queued writes and closes a moment, then stop outright.
    asio::post(impl_->io, [impl = impl_.get()] { impl->io.stop(); });
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::vector<InboundEvent> Server::drain() {
    std::lock_guard lock(impl_->inbox_mutex);
    return std::exchange(impl_->inbox, {});
}

void Server::dispatch(std::vector<Delivery> deliveries) {
    if (deliveries.empty()) return;
    asio::post(impl_->io, [impl = impl_.get(), batch = std::move(deliveries)] {
        for (const auto& d : batch) {
            auto it = impl->connections.find(d.session);
            if (it != impl->connections.end()) it->second->send(d.message);
        }
    });
}

void apply_inbound(Gateway& gateway, std::vector<InboundEvent> events) {
    for (auto& ev : events) {
        std::visit(Overloaded{
                       [&](inbound::Opened& o) { gateway.open_session(ev.session, o.transport); },
                       [&](inbound::FrameIn& f) {
                           if (f.result.frame) {
                               gateway.handle_frame(ev.session, *f.result.frame);
                           } else {
                               gateway.handle_decode_error(ev.session, f.result.error);
                           }
                       },
                       [&](inbound::TextIn& t) { gateway.handle_console_text(ev.session, t.text); },
                       [&](inbound::Closed&) { gateway.close_session(ev.session); },
                   },
                   ev.event);
    }
}

}  // namespace blimp
