/**
 * Minimal chat-completion client over fetch.
 *
 * Two endpoint shapes are supported: OpenAI-style chat completions
 * (`{model, messages} -> {choices[0].message.content}`) and a raw shape
 * (`{prompt} -> {content}`). The API key comes from the COAPT_LLM_KEY
 * environment variable and is only ever sent as a bearer header; it is
 * never written into any output.
 */

export type EndpointShape = "openai-chat" | "raw";

export interface ChatClientOptions {
  endpoint: string;
  model: string;
  shape?: EndpointShape;
  apiKeyEnv?: string;
  fetchImpl?: typeof fetch;
}

export class TransportError extends Error {}

export class ChatClient {
  private readonly endpoint: string;
  private readonly model: string;
  private readonly shape: EndpointShape;
  private readonly apiKey: string | undefined;
  private readonly fetchImpl: typeof fetch;

  constructor(options: ChatClientOptions) {
    if (!options.endpoint) {
      throw new Error("chat endpoint URL must be non-empty");
    }
    this.endpoint = options.endpoint;
    this.model = options.model;
    this.shape = options.shape ?? "openai-chat";
    this.apiKey = process.env[options.apiKeyEnv ?? "COAPT_LLM_KEY"];
    this.fetchImpl = options.fetchImpl ?? fetch;
  }

  /** One completion for the given instruction; fresh sampling per call. */
  async complete(instruction: string): Promise<string> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.apiKey) {
      headers["authorization"] = `Bearer ${this.apiKey}`;
    }
    const body =
      this.shape === "openai-chat"
        ? { model: this.model, messages: [{ role: "user", content: instruction }] }
        : { prompt: instruction };

    let response: Response;
    try {
      response = await this.fetchImpl(this.endpoint, {
        method: "POST",
        headers,
        body: JSON.stringify(body),
      });
    } catch (err) {
      throw new TransportError(`cannot reach ${this.endpoint}: ${String(err)}`);
    }
    if (!response.ok) {
      throw new TransportError(`endpoint returned ${response.status} ${response.statusText}`);
    }
    const payload = (await response.json()) as Record<string, unknown>;
    const content = this.extractContent(payload);
    if (typeof content !== "string") {
      throw new TransportError("endpoint response carries no text content");
    }
    return content;
  }

  private extractContent(payload: Record<string, unknown>): unknown {
    if (this.shape === "raw") {
      return payload["content"] ?? payload["text"];
    }
    const choices = payload["choices"];
    if (Array.isArray(choices) && choices.length > 0) {
      const message = (choices[0] as Record<string, unknown>)["message"];
      if (message && typeof message === "object") {
        return (message as Record<string, unknown>)["content"];
      }
    }
    return undefined;
  }
}
