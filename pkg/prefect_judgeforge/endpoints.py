"""Thin clients for the chat-completion and completion (logprob echo) endpoints."""
from typing import Any, Dict

import httpx

from prefect_judgeforge.exceptions import (
    AuthError,
    GatewayTimeout,
    ProtocolError,
    RateLimited,
    ServerError,
)


class EndpointClient:
    """Posts JSON payloads to one endpoint path and maps failures to gateway errors.

    Args:
        http_client: A configured `httpx.Client` carrying base url and auth headers.
    """

    path = "/"

    def __init__(self, http_client: httpx.Client):
        self.http_client = http_client

    def post(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        """
        Sends one request.

        Raises:
            GatewayTimeout: On timeouts and connection failures.
            AuthError: On 401 and 403.
            RateLimited: On 429.
            ServerError: On 408 and 5xx.
            ProtocolError: On other error statuses and non-JSON bodies.
        """
        try:
            response = self.http_client.post(self.path, json=payload)
        except httpx.TimeoutException as exc:
            raise GatewayTimeout(f"Request to {self.path} timed out.") from exc
        except httpx.TransportError as exc:
            raise GatewayTimeout(f"Request to {self.path} failed: {exc}") from exc

        status = response.status_code
        if status in (401, 403):
            raise AuthError(f"Endpoint rejected the credentials ({status}).")
        if status == 429:
            raise RateLimited(f"Endpoint throttled the request ({status}).")
        if status == 408 or status >= 500:
            raise ServerError(f"Endpoint failed with status {status}.")
        if status >= 400:
            raise ProtocolError(f"Endpoint answered {status}: {response.text[:200]}")
        try:
            body = response.json()
        except ValueError as exc:
            raise ProtocolError("Endpoint answered with a non-JSON body.") from exc
        if not isinstance(body, dict):
            raise ProtocolError("Endpoint answered with a non-object JSON body.")
        return body


class ChatEndpoint(EndpointClient):
    path = "/chat/completions"


class CompletionsEndpoint(EndpointClient):
    path = "/completions"
