"""A local chat-completion server for end-to-end CLI tests.

Synthesis prompts are answered with a fixed datapoint. Inference prompts get
a query chosen by the request seed: every third seed answers with the
example's gold query (looked up by question), the rest with a wrong one.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

DATAPOINT = """Domain: Beekeeping
Schema:
CREATE TABLE hive (hive_id INTEGER PRIMARY KEY, frames INTEGER);
INSERT INTO hive VALUES (1, 9), (2, 4);
Question: How many {level} hives have more than 8 frames?
Answer: SELECT count(*) FROM hive WHERE frames > 8;
"""


class StubServer:
    def __init__(self, answers: dict[str, str] | None = None) -> None:
        self.answers = answers or {}
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:  # noqa: N802
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with stub._lock:
                    stub.requests.append(body)
                content = stub.reply(body)
                data = json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args: object) -> None:
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.server.server_address[1]}/v1/chat/completions"

    def reply(self, body: dict) -> str:
        prompt = body["messages"][0]["content"]
        if "difficulty level" in prompt:
            level = next(lv for lv in ("easy", "medium", "hard") if f"at the {lv} difficulty" in prompt)
            return DATAPOINT.format(level=level)
        question = prompt.rsplit("Question: ", 1)[-1].strip()
        if body.get("seed", 0) % 3 == 0 and question in self.answers:
            return f"```sql\n{self.answers[question]};\n```"
        return "Sure.\nSELECT 11;"

    def __enter__(self) -> StubServer:
        self.thread.start()
        return self

    def __exit__(self, *exc: object) -> None:
        self.server.shutdown()
        self.server.server_close()
