import os
from contextlib import contextmanager
from typing import Generator, Optional, Union

import httpx
from prefect.blocks.core import Block
from prefect.utilities.collections import listrepr
from pydantic import Field, SecretStr
from typing_extensions import Literal

from prefect_judgeforge.endpoints import ChatEndpoint, CompletionsEndpoint

JUDGE_CLIENT_TYPES = {
    "chat": ChatEndpoint,
    "completions": CompletionsEndpoint,
}


def _api_key_from_env() -> Optional[SecretStr]:
    api_key = os.environ.get("JUDGE_API_KEY")
    return SecretStr(api_key) if api_key else None


def _api_base_from_env() -> str:
    return os.environ.get("JUDGE_API_BASE", "http://localhost:8000/v1")


class JudgeCredentials(Block):

    """Credentials block for generating configured model endpoint clients.

    Attributes:
        api_key: Bearer token sent to the endpoint; defaults to `JUDGE_API_KEY`.
        api_base: Base url of the chat-completion compatible API; defaults to
            `JUDGE_API_BASE`.
        timeout: Per-request timeout in seconds.

    Example:
        Load stored judge credentials:
        ```python
        from prefect_judgeforge.credentials import JudgeCredentials

        judge_credentials = JudgeCredentials.load("BLOCK_NAME")
        ```
    """

    api_key: Optional[SecretStr] = Field(
        default_factory=_api_key_from_env,
        description="API key for the model endpoint.",
        title="API Key",
    )
    api_base: str = Field(
        default_factory=_api_base_from_env,
        description="Base url of the chat-completion compatible API.",
        title="API Base URL",
    )
    timeout: float = Field(
        default=60.0,
        description="Per-request timeout in seconds.",
        title="Timeout",
    )
    _block_type_name = "Judge Credentials"
    _block_type_slug = "judge-credentials"
    _logo_url = "https://images.ctfassets.net/gm98wzqotmnx/08yCE6xpJMX9Kjl5VArDS/c2ede674c20f90b9b6edeab71feffac9/prefect-200x200.png?h=250"  # noqa
    _documentation_url = "https://judgeforge.github.io/prefect-judgeforge/credentials/#prefect_judgeforge.credentials.JudgeCredentials"  # noqa

    @contextmanager
    def get_client(
        self,
        client_type: Literal["chat", "completions"],
        transport: Optional[httpx.BaseTransport] = None,
    ) -> Generator[Union[ChatEndpoint, CompletionsEndpoint], None, None]:
        """Convenience method for retrieving an endpoint-specific client.

        Args:
            client_type: The endpoint-specific type of client to retrieve.
            transport: Optional `httpx` transport, e.g. a `MockTransport` in tests.

        Yields:
            An authenticated, endpoint-specific client.

        Example:
            ```python
            from prefect_judgeforge.credentials import JudgeCredentials

            with JudgeCredentials().get_client("chat") as chat:
                body = chat.post({"model": "judge", "messages": []})
            ```
        """
        headers = {"Content-Type": "application/json"}
        if self.api_key is not None:
            headers["Authorization"] = f"Bearer {self.api_key.get_secret_value()}"
        with httpx.Client(
            base_url=self.api_base,
            headers=headers,
            timeout=self.timeout,
            transport=transport,
        ) as http_client:
            yield self.get_resource_specific_client(
                client_type, http_client=http_client
            )

    def get_resource_specific_client(
        self,
        client_type: str,
        http_client: httpx.Client,
    ) -> Union[ChatEndpoint, CompletionsEndpoint]:
        """
        Utility function for wrapping a generic http client.

        Args:
            client_type: The endpoint type to talk to.
            http_client: A configured `httpx.Client`.

        Returns:
            An endpoint-specific client.

        Raises:
            ValueError: If `client_type` is not a valid endpoint client type.
        """

        try:
            return JUDGE_CLIENT_TYPES[client_type](http_client)
        except KeyError:
            raise ValueError(
                f"Invalid client type provided '{client_type}'."
                f" Must be one of {listrepr(JUDGE_CLIENT_TYPES.keys())}."
            )
