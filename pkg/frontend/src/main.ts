/** Live console: poll a running gateway and redraw on change.
 *
 *     node dist/main.js [http://127.0.0.1:8000]
 */
import { GatewayClient } from "./client.js";
import { pollAndRender, startPolling } from "./poll.js";
import { renderConsole } from "./render.js";
import { initialViewState, type ViewState } from "./state.js";

const baseUrl = process.argv[2] ?? process.env["DCX_GATEWAY_URL"] ?? "http://127.0.0.1:8000";
const client = new GatewayClient(baseUrl);

let state: ViewState = initialViewState();
let lastFrame = "";

console.log(`connecting to ${baseUrl} (Ctrl+C to exit)`);

const stop = startPolling(async () => {
  state = await pollAndRender(client, state);
  const frame = renderConsole(state);
  if (frame !== lastFrame) {
    console.log(`\n${frame}`);
    lastFrame = frame;
  }
});

process.on("SIGINT", () => {
  stop();
  process.exit(0);
});
